#include "reltrace/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

#include "reltrace/error.hpp"

namespace reltrace {

namespace {

using nlohmann::json;

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "spec",      "corpus",      "weights",      "output_dir",         "n",              "k",
        "q",         "episodes",    "seeds",        "feature_kind",       "m",              "dedup",
        "epochs",    "lr",          "order_fix",    "subject_first_only", "permute_labels", "workers",
        "seed_index", "episode",    "query",        "per_layer",          "alignment",      "concentration",
        "correlations", "stats",    "metrics",      "metrics_model"};
    return keys;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        // nlohmann would happily wrap -4 into a huge unsigned value.
        require(v.is_number_unsigned(), ErrorKind::Config,
                fmt::format("config key '{}' must be a non-negative integer, got {}", key, v.dump()));
    }
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::Config, fmt::format("config key '{}' has the wrong type: {}", key, v.dump()));
    }
}

// Flag and environment values arrive as text: JSON literals are taken as such,
// "1,2,3" becomes a list for `seeds`, anything else is a string.
json parse_text_value(const std::string& key, const std::string& text) {
    if (key == "seeds" && text.find(',') != std::string::npos && text.front() != '[') {
        json list = json::array();
        std::stringstream ss(text);
        std::string part;
        while (std::getline(ss, part, ',')) {
            try {
                list.push_back(std::stoull(part));
            } catch (const std::exception&) {
                fail(ErrorKind::Config, fmt::format("bad seed '{}'", part));
            }
        }
        return list;
    }
    json parsed = json::parse(text, nullptr, false);
    if (parsed.is_discarded()) {
        return text;
    }
    if (key == "seeds" && parsed.is_number_unsigned()) {
        return json::array({parsed});
    }
    return parsed;
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

json optional_number(const std::optional<double>& v) {
    return v ? json(*v) : json("undefined");
}

double median(std::vector<double> v) {
    require(!v.empty(), ErrorKind::Argument, "median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<RelationExample> episode_pool(const RunConfig& config, const Workspace& ws) {
    return config.subject_first_only ? filter_subject_first(ws.corpus) : ws.corpus;
}

struct EpisodeRun {
    Episode episode;
    EpisodeResult result;
};

EpisodeRun run_one(const RunConfig& config, const Workspace& ws, const std::vector<RelationExample>& pool,
                   std::uint64_t seed, std::uint32_t index) {
    const std::uint64_t es = episode_seed(seed, index);
    Rng rng(es);
    EpisodeRun run;
    run.episode = sample_episode(pool, config.n, config.k, config.q, rng, config.order_fix);
    EpisodeOptions opt;
    opt.kind = config.feature_kind;
    opt.m = config.m;
    opt.dedup = config.dedup;
    opt.hyper.epochs = config.epochs;
    opt.hyper.lr = config.lr;
    opt.hyper.seed = es;
    opt.permute_support_labels = config.permute_labels;
    opt.permute_seed = mix_seed(es, 1);
    opt.relation_names = ws.relation_names;
    run.result = run_episode(ws.weights, run.episode, opt);
    for (const auto& p : run.result.query_predictions) {
        for (double z : p.logits) {
            require(std::isfinite(z), ErrorKind::Numerical, "probe produced a non-finite logit");
        }
    }
    return run;
}

void check_episode_fits(const RunConfig& config, const Workspace& ws) {
    std::uint32_t n_rel = 0;
    for (const auto& ex : ws.corpus) {
        n_rel = std::max(n_rel, ex.relation + 1);
    }
    require(config.n <= n_rel, ErrorKind::Config,
            fmt::format("n = {} exceeds the {} relations in the corpus", config.n, n_rel));
}

}  // namespace

void RunConfig::validate() const {
    require(n >= 2, ErrorKind::Config, "n must be at least 2");
    require(k >= 1, ErrorKind::Config, "k must be at least 1");
    require(q >= 1, ErrorKind::Config, "q must be at least 1");
    require(m >= 1, ErrorKind::Config, "m must be at least 1");
    require(episodes >= 1, ErrorKind::Config, "episodes must be at least 1");
    require(!seeds.empty(), ErrorKind::Config, "at least one seed is required");
    require(epochs >= 1, ErrorKind::Config, "epochs must be at least 1");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "lr must be positive");
    require(workers >= 1, ErrorKind::Config, "workers must be at least 1");
}

void apply_overrides(RunConfig& c, const json& o) {
    require(o.is_object(), ErrorKind::Config, "config must be a JSON object");
    for (const auto& [key, v] : o.items()) {
        if (key == "spec") c.spec = get_as<std::string>(v, key);
        else if (key == "corpus") c.corpus = get_as<std::string>(v, key);
        else if (key == "weights") c.weights = get_as<std::string>(v, key);
        else if (key == "output_dir") c.output_dir = get_as<std::string>(v, key);
        else if (key == "n") c.n = get_as<std::uint32_t>(v, key);
        else if (key == "k") c.k = get_as<std::uint32_t>(v, key);
        else if (key == "q") c.q = get_as<std::uint32_t>(v, key);
        else if (key == "episodes") c.episodes = get_as<std::uint32_t>(v, key);
        else if (key == "seeds") {
            require(v.is_array(), ErrorKind::Config, "config key 'seeds' must be a list of integers");
            c.seeds.clear();
            for (const auto& s : v) c.seeds.push_back(get_as<std::uint64_t>(s, key));
        }
        else if (key == "feature_kind") {
            try {
                c.feature_kind = parse_feature_kind(get_as<std::string>(v, key));
            } catch (const Error& e) {
                fail(ErrorKind::Config, e.what());
            }
        }
        else if (key == "m") c.m = get_as<std::size_t>(v, key);
        else if (key == "dedup") c.dedup = get_as<bool>(v, key);
        else if (key == "epochs") c.epochs = get_as<std::uint32_t>(v, key);
        else if (key == "lr") c.lr = get_as<double>(v, key);
        else if (key == "order_fix") c.order_fix = get_as<bool>(v, key);
        else if (key == "subject_first_only") c.subject_first_only = get_as<bool>(v, key);
        else if (key == "permute_labels") c.permute_labels = get_as<bool>(v, key);
        else if (key == "workers") c.workers = get_as<std::uint32_t>(v, key);
        else if (key == "seed_index") c.seed_index = get_as<std::uint32_t>(v, key);
        else if (key == "episode") c.episode = get_as<std::uint32_t>(v, key);
        else if (key == "query") {
            if (v.is_null() || (v.is_string() && v.get<std::string>() == "all")) c.query.reset();
            else c.query = get_as<std::uint32_t>(v, key);
        }
        else if (key == "per_layer") c.per_layer = get_as<bool>(v, key);
        else if (key == "alignment") c.alignment = get_as<bool>(v, key);
        else if (key == "concentration") c.concentration = get_as<bool>(v, key);
        else if (key == "correlations") c.correlations = get_as<bool>(v, key);
        else if (key == "stats") c.stats = get_as<std::string>(v, key);
        else if (key == "metrics") c.metrics = get_as<std::string>(v, key);
        else if (key == "metrics_model") c.metrics_model = get_as<std::string>(v, key);
        else fail(ErrorKind::Config, fmt::format("unknown config key '{}'", key));
    }
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    apply_overrides(c, j);
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["spec"] = c.spec.string();
    j["corpus"] = c.corpus.string();
    j["weights"] = c.weights.string();
    j["output_dir"] = c.output_dir.string();
    j["n"] = c.n;
    j["k"] = c.k;
    j["q"] = c.q;
    j["episodes"] = c.episodes;
    j["seeds"] = c.seeds;
    j["feature_kind"] = std::string(to_string(c.feature_kind));
    j["m"] = c.m;
    j["dedup"] = c.dedup;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["order_fix"] = c.order_fix;
    j["subject_first_only"] = c.subject_first_only;
    j["permute_labels"] = c.permute_labels;
    j["workers"] = c.workers;
    j["seed_index"] = c.seed_index;
    j["episode"] = c.episode;
    j["query"] = c.query ? json(*c.query) : json("all");
    j["per_layer"] = c.per_layer;
    j["alignment"] = c.alignment;
    j["concentration"] = c.concentration;
    j["correlations"] = c.correlations;
    j["stats"] = c.stats.string();
    j["metrics"] = c.metrics.string();
    j["metrics_model"] = c.metrics_model;
    return j;
}

RunConfig resolve_config(const std::filesystem::path& file, const std::map<std::string, std::string>& flags) {
    RunConfig c;
    if (!file.empty()) {
        std::ifstream in(file);
        require(in.good(), ErrorKind::Config, fmt::format("cannot open config file {}", file.string()));
        json j = json::parse(in, nullptr, false);
        require(!j.is_discarded(), ErrorKind::Config, fmt::format("config file {} is not valid JSON", file.string()));
        apply_overrides(c, j);
    }
    json env = json::object();
    for (const auto& key : config_keys()) {
        std::string name = "RELTRACE_";
        for (char ch : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (const char* v = std::getenv(name.c_str())) {
            env[key] = parse_text_value(key, v);
        }
    }
    apply_overrides(c, env);
    json cli = json::object();
    for (const auto& [key, text] : flags) {
        cli[key] = parse_text_value(key, text);
    }
    apply_overrides(c, cli);
    c.validate();
    return c;
}

json provenance(const RunConfig& config) {
    json cfg = config_to_json(config);
    // Scheduling does not change results, so it stays out of the hash.
    cfg.erase("workers");
    return {{"artifact", "reltrace"},
            {"version", kArtifactVersion},
            {"config_hash", fnv1a_hex(cfg.dump())},
            {"seeds", config.seeds}};
}

ModelConfig model_config_from_json(const json& j) {
    require(j.is_object(), ErrorKind::Config, "model config must be a JSON object");
    ModelConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "n_layers") c.n_layers = get_as<std::uint32_t>(v, key);
        else if (key == "n_heads") c.n_heads = get_as<std::uint32_t>(v, key);
        else if (key == "d_model") c.d_model = get_as<std::uint32_t>(v, key);
        else if (key == "d_head") c.d_head = get_as<std::uint32_t>(v, key);
        else if (key == "d_ff") c.d_ff = get_as<std::uint32_t>(v, key);
        else if (key == "vocab_size") c.vocab_size = get_as<std::uint32_t>(v, key);
        else if (key == "max_seq_len") c.max_seq_len = get_as<std::uint32_t>(v, key);
        else if (key == "use_rope") c.use_rope = get_as<bool>(v, key);
        else if (key == "norm_eps") c.norm_eps = get_as<double>(v, key);
        else if (key == "rope_theta") c.rope_theta = get_as<double>(v, key);
        else fail(ErrorKind::Config, fmt::format("unknown model config key '{}'", key));
    }
    return c;
}

json model_config_to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},         {"d_model", c.d_model},
            {"d_head", c.d_head},     {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len}, {"use_rope", c.use_rope}, {"norm_eps", c.norm_eps},
            {"rope_theta", c.rope_theta}};
}

std::uint64_t episode_seed(std::uint64_t seed, std::uint32_t episode) {
    return mix_seed(seed, episode);
}

Workspace load_workspace(const RunConfig& config) {
    require(!config.weights.empty(), ErrorKind::Config, "no weights path configured");
    require(!config.corpus.empty(), ErrorKind::Config, "no corpus path configured");
    for (const auto& p : {config.weights, config.corpus}) {
        require(std::filesystem::exists(p), ErrorKind::Config, fmt::format("{} does not exist", p.string()));
    }
    Workspace ws;
    ws.weights = load_weights(config.weights);
    ws.corpus = load_corpus(config.corpus);
    require(!ws.corpus.empty(), ErrorKind::Data, "corpus is empty");
    std::uint32_t n_rel = 0;
    for (const auto& ex : ws.corpus) {
        n_rel = std::max(n_rel, ex.relation + 1);
        for (TokenId id : ex.tokens) {
            require(id < ws.weights.config.vocab_size, ErrorKind::Data, "corpus token outside the model vocabulary");
        }
    }
    if (!config.spec.empty()) {
        require(std::filesystem::exists(config.spec), ErrorKind::Config,
                fmt::format("{} does not exist", config.spec.string()));
        const auto spec = load_spec(config.spec);
        for (std::uint32_t r = 0; r < n_rel; ++r) ws.relation_names.push_back(spec.relation_name(r));
        ws.token_names = spec.token_strings();
    } else {
        for (std::uint32_t r = 0; r < n_rel; ++r) ws.relation_names.push_back("R" + std::to_string(r));
    }
    return ws;
}

EvalOutput run_eval(const RunConfig& config, const Workspace& ws) {
    config.validate();
    check_episode_fits(config, ws);
    const auto pool = episode_pool(config, ws);
    const std::size_t per_seed = config.episodes;
    const std::size_t total = per_seed * config.seeds.size();

    struct Summary {
        double accuracy;
        std::vector<std::uint32_t> golds, predictions;
    };
    auto summaries = parallel_map(total, config.workers, [&](std::size_t i) {
        const auto run = run_one(config, ws, pool, config.seeds[i / per_seed], static_cast<std::uint32_t>(i % per_seed));
        return Summary{run.result.accuracy, run.result.golds, run.result.predictions};
    });

    EvalOutput out;
    std::vector<std::uint32_t> golds, predictions;
    json seeds = json::array();
    std::vector<double> seed_means;
    for (std::size_t s = 0; s < config.seeds.size(); ++s) {
        double sum = 0.0;
        json accs = json::array();
        for (std::size_t e = 0; e < per_seed; ++e) {
            const auto& sm = summaries[s * per_seed + e];
            sum += sm.accuracy;
            accs.push_back(sm.accuracy);
            out.episode_accuracies.push_back(sm.accuracy);
            golds.insert(golds.end(), sm.golds.begin(), sm.golds.end());
            predictions.insert(predictions.end(), sm.predictions.begin(), sm.predictions.end());
        }
        seed_means.push_back(sum / static_cast<double>(per_seed));
        seeds.push_back({{"seed", config.seeds[s]}, {"mean_accuracy", seed_means.back()}, {"episode_accuracy", accs}});
    }
    double mean = 0.0;
    for (double v : seed_means) mean += v;
    mean /= static_cast<double>(seed_means.size());
    double var = 0.0;
    for (double v : seed_means) var += (v - mean) * (v - mean);
    const double sd = seed_means.size() > 1 ? std::sqrt(var / static_cast<double>(seed_means.size() - 1)) : 0.0;

    out.mean_accuracy = mean;
    out.report = classification_report(predictions, golds, ws.relation_names);
    out.document = {{"provenance", provenance(config)},
                    {"config", config_to_json(config)},
                    {"accuracy", mean},
                    {"accuracy_sd_over_seeds", sd},
                    {"seeds", seeds},
                    {"report", to_json(out.report)}};
    return out;
}

QueryAttribution attribute_query(const Workspace& ws, const Episode& episode, const EpisodeResult& result,
                                 std::size_t query_index) {
    const auto& probe = result.probe;
    require(probe.kind == FeatureKind::AttnHead, ErrorKind::Config,
            "attribution needs a probe over attn_head features");
    require(query_index < episode.query.size(), ErrorKind::Config,
            fmt::format("query {} out of range ({} queries)", query_index, episode.query.size()));
    const auto& prompt = episode.query[query_index];
    const auto x = result.query_features.values.row(query_index);
    const auto trace = forward(ws.weights, prompt.tokens);

    QueryAttribution qa;
    qa.t = prompt.t;
    for (std::uint32_t j = 0; j <= prompt.t; ++j) {
        const TokenId id = prompt.tokens[j];
        qa.tokens.push_back(id < ws.token_names.size() ? ws.token_names[id] : "<" + std::to_string(id) + ">");
    }
    qa.direction = contrast_direction(probe, x);
    qa.logits = result.query_predictions[query_index].logits;
    require(qa.direction.predicted == result.query_predictions[query_index].cls, ErrorKind::Numerical,
            "contrast direction disagrees with the probe prediction");
    qa.predicted = probe.class_names[qa.direction.predicted];
    qa.gold = probe.class_names[result.query_features.labels[query_index]];
    qa.contrast_total = dot(qa.direction.delta_w, x);
    qa.heads = head_score(probe, x, qa.direction);
    qa.token_scores = token_score(probe, trace, ws.weights, prompt.t, qa.direction);
    qa.avg_attention = avg_attention(trace, prompt.t);

    double head_sum = 0.0, token_sum = 0.0, scale = 1.0;
    for (const auto& [key, v] : qa.heads) head_sum += v;
    for (double v : qa.token_scores.aggregated) token_sum += v;
    for (std::size_t m = 0; m < x.size(); ++m) scale += std::abs(qa.direction.delta_w[m] * x[m]);
    qa.head_completeness_error = std::abs(head_sum - qa.contrast_total);
    qa.token_completeness_error = std::abs(token_sum - qa.contrast_total);
    // Tolerances are absolute for O(1) totals and grow with the magnitude of the summed terms.
    require(qa.head_completeness_error <= 1e-10 * scale, ErrorKind::Numerical,
            fmt::format("HeadScore completeness violated by {:.3e}", qa.head_completeness_error));
    require(qa.token_completeness_error <= 1e-9 * scale, ErrorKind::Numerical,
            fmt::format("TokenScore completeness violated by {:.3e}", qa.token_completeness_error));
    return qa;
}

AttributeOutput run_attribute(const RunConfig& config, const Workspace& ws) {
    config.validate();
    check_episode_fits(config, ws);
    require(config.seed_index < config.seeds.size(), ErrorKind::Config, "seed_index out of range");
    const auto pool = episode_pool(config, ws);
    const auto run = run_one(config, ws, pool, config.seeds[config.seed_index], config.episode);

    std::vector<std::size_t> selected;
    if (config.query) {
        selected.push_back(*config.query);
    } else {
        for (std::size_t i = 0; i < run.episode.query.size(); ++i) selected.push_back(i);
    }
    AttributeOutput out;
    auto queries = parallel_map(selected.size(), config.workers,
                                [&](std::size_t i) { return attribute_query(ws, run.episode, run.result, selected[i]); });
    json items = json::array();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        json item = to_json(queries[i], run.result.probe.class_names);
        item["query"] = selected[i];
        items.push_back(std::move(item));
    }
    json relations = json::array();
    for (std::uint32_t r : run.episode.relations) relations.push_back(ws.relation_names.at(r));
    out.queries = std::move(queries);
    out.document = {{"provenance", provenance(config)},
                    {"seed", config.seeds[config.seed_index]},
                    {"episode", config.episode},
                    {"accuracy", run.result.accuracy},
                    {"relations", relations},
                    {"queries", items}};
    return out;
}

std::map<std::string, double> load_metric_column(const std::filesystem::path& path, const std::string& model,
                                                 const std::string& column) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Config, fmt::format("cannot open metrics file {}", path.string()));
    std::string line;
    std::vector<std::string> header;
    std::map<std::string, double> out;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        if (header.empty()) {
            header = cells;
            continue;
        }
        require(cells.size() == header.size(), ErrorKind::Data,
                fmt::format("{}:{}: expected {} columns", path.string(), line_no, header.size()));
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
        require(row.count("model") && row.count("property_id") && row.count(column), ErrorKind::Data,
                fmt::format("{}: needs model, property_id and {} columns", path.string(), column));
        if (row["model"] != model) continue;
        try {
            std::size_t used = 0;
            const double v = std::stod(row[column], &used);
            require(used == row[column].size(), ErrorKind::Data, "trailing characters");
            out[row["property_id"]] = v;
        } catch (const std::logic_error&) {
            fail(ErrorKind::Data, fmt::format("{}:{}: bad number '{}'", path.string(), line_no, row[column]));
        }
    }
    require(!out.empty(), ErrorKind::Config, fmt::format("no rows for model '{}' in {}", model, path.string()));
    return out;
}

json run_analyze(const RunConfig& config, const Workspace* ws) {
    config.validate();
    json doc = {{"provenance", provenance(config)}};
    std::map<std::string, double> run_f1;
    std::map<std::string, double> run_concentration;

    if (ws != nullptr && (config.alignment || config.concentration || (config.correlations && config.metrics.empty()))) {
        require(config.feature_kind == FeatureKind::AttnHead, ErrorKind::Config,
                "alignment and concentration need feature_kind attn_head");
        check_episode_fits(config, *ws);
        const auto pool = episode_pool(config, *ws);
        const std::size_t per_seed = config.episodes;
        const std::size_t total = per_seed * config.seeds.size();

        struct QuerySummary {
            std::uint32_t gold, predicted;
            AlignmentStats alignment;
            std::size_t heads_for_95;
        };
        auto episodes = parallel_map(total, config.workers, [&](std::size_t i) {
            const auto run =
                run_one(config, *ws, pool, config.seeds[i / per_seed], static_cast<std::uint32_t>(i % per_seed));
            const auto profile = tfidf_profiles(run.episode);
            std::vector<QuerySummary> out;
            for (std::size_t qi = 0; qi < run.episode.query.size(); ++qi) {
                const auto qa = attribute_query(*ws, run.episode, run.result, qi);
                const auto& prompt = run.episode.query[qi];
                const bool correct = run.result.golds[qi] == run.result.predictions[qi];
                const std::span<const TokenId> toks(prompt.tokens.data(), prompt.t + 1);
                out.push_back({run.result.golds[qi], run.result.predictions[qi],
                               lexical_alignment(qa.token_scores.aggregated, toks, profile,
                                                 run.result.predictions[qi], correct),
                               concentration(qa.heads)});
            }
            return out;
        });

        std::vector<AlignmentStats> stats;
        std::vector<std::uint32_t> golds, predictions;
        std::map<std::uint32_t, std::vector<double>> conc;
        std::vector<double> all_conc;
        for (const auto& ep : episodes) {
            for (const auto& q : ep) {
                stats.push_back(q.alignment);
                golds.push_back(q.gold);
                predictions.push_back(q.predicted);
                conc[q.gold].push_back(static_cast<double>(q.heads_for_95));
                all_conc.push_back(static_cast<double>(q.heads_for_95));
            }
        }
        const auto report = classification_report(predictions, golds, ws->relation_names);
        for (const auto& c : report.per_class) run_f1[c.name] = c.f1;
        doc["report"] = to_json(report);

        if (config.alignment) {
            const auto s = aggregate_alignment(stats);
            doc["alignment"] = {{"mean_rho", optional_number(s.mean_rho)},
                                {"mean_mass", s.mean_mass},
                                {"strong_align_incorrect", optional_number(s.strong_align_incorrect)},
                                {"queries", s.queries},
                                {"incorrect", s.incorrect}};
        }
        json per_relation = json::object();
        for (const auto& [r, values] : conc) {
            const auto& name = ws->relation_names.at(r);
            run_concentration[name] = median(values);
            per_relation[name] = {{"median_heads_for_95", median(values)}, {"queries", values.size()}};
        }
        if (config.concentration) {
            doc["concentration"] = {{"median_heads_for_95", median(all_conc)}, {"per_relation", per_relation}};
        }
    }

    if (config.correlations) {
        require(!config.stats.empty(), ErrorKind::Config, "correlations requested but no stats file configured");
        require(std::filesystem::exists(config.stats), ErrorKind::Config,
                fmt::format("stats file {} does not exist", config.stats.string()));
        const auto stats = ingest_stats(config.stats);
        std::map<std::string, double> metric;
        std::string source;
        std::map<std::string, double> concentration_map;
        if (!config.metrics.empty()) {
            metric = load_metric_column(config.metrics, config.metrics_model, "f1");
            source = config.metrics.string() + ":" + config.metrics_model;
        } else {
            require(ws != nullptr, ErrorKind::Config, "correlations need either a metrics file or a model and corpus");
            metric = run_f1;
            concentration_map = run_concentration;
            source = "run";
        }
        const auto rho = correlate(metric, stats, concentration_map);
        json values = json::object(), signs = json::object();
        for (const auto& [key, v] : rho) {
            values[key] = optional_number(v);
            signs[key] = !v ? "undefined" : (*v < 0.0 ? "negative" : (*v > 0.0 ? "positive" : "zero"));
        }
        doc["correlations"] = {{"metric", "f1"}, {"source", source}, {"spearman", values}, {"signs", signs}};
    }
    return doc;
}

}  // namespace reltrace
