// Command-line front end: gen, plant, eval, attribute, analyze.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "reltrace/error.hpp"
#include "reltrace/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reltrace;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInvariant = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return kExitConfig;
        case ErrorKind::Numerical: return kExitInvariant;
        default: return kExitData;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::Config, fmt::format("cannot write {}", path.string()));
    out << text;
    require(out.good(), ErrorKind::Data, fmt::format("write to {} failed", path.string()));
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

// Leftover `--key value` pairs become config overrides.
std::map<std::string, std::string> collect_flags(const std::vector<std::string>& rest) {
    std::map<std::string, std::string> flags;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const auto& arg = rest[i];
        require(arg.rfind("--", 0) == 0 && arg.size() > 2, ErrorKind::Config, fmt::format("unexpected argument '{}'", arg));
        std::string key = arg.substr(2);
        std::string value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            require(i + 1 < rest.size(), ErrorKind::Config, fmt::format("flag --{} needs a value", key));
            value = rest[++i];
        }
        for (auto& ch : key) {
            if (ch == '-') ch = '_';
        }
        flags[key] = value;
    }
    return flags;
}

void check_planted_head(const ModelWeights& weights, const SyntheticSpec& spec, const std::vector<RelationExample>& corpus,
                        const PlantOptions& opt) {
    const auto prompt = build_prompt(corpus.front(), true);
    const auto trace = forward(weights, prompt.tokens);
    const auto& a = trace.layers[opt.layer].attn_weights;
    double cue_mass = 0.0;
    for (std::uint32_t j = 0; j <= prompt.t; ++j) {
        if (spec.is_cue(prompt.tokens[j])) cue_mass += a.at(opt.head, prompt.t, j);
    }
    require(cue_mass > 0.5, ErrorKind::Numerical,
            fmt::format("planted head puts only {:.3f} attention mass on cue tokens", cue_mass));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reltrace: relation tracing through attention-head contributions"};
    app.require_subcommand(1);

    fs::path spec_path, out_path, model_config_path, config_path;
    PlantOptions plant;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic relation corpus (JSONL)");
    gen->add_option("--spec", spec_path, "Synthetic corpus spec (JSON)")->required();
    gen->add_option("--out", out_path, "Output corpus path")->required();

    auto* plant_cmd = app.add_subcommand("plant", "Build a planted-circuit model for a synthetic spec");
    plant_cmd->add_option("--spec", spec_path, "Synthetic corpus spec (JSON)")->required();
    plant_cmd->add_option("--model-config", model_config_path, "Model shape (JSON); vocabulary follows the spec");
    plant_cmd->add_option("--out", out_path, "Output weights path")->required();
    plant_cmd->add_option("--layer", plant.layer, "Planted layer");
    plant_cmd->add_option("--head", plant.head, "Planted head");
    plant_cmd->add_option("--attention-logit", plant.attention_logit, "Cue attention logit gap");
    plant_cmd->add_option("--noise", plant.noise_scale, "Output scale of non-planted components");
    plant_cmd->add_option("--seed", plant.seed, "Seed for the random parts");

    std::vector<CLI::App*> runs;
    for (const auto& [name, help] : {std::pair{"eval", "Run n-way k-shot probing episodes"},
                                     std::pair{"attribute", "HeadScore/TokenScore attribution for one episode"},
                                     std::pair{"analyze", "Lexical alignment, concentration and correlations"}}) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "Run config (JSON)");
        sub->allow_extras();
        runs.push_back(sub);
    }
    auto* eval = runs[0];
    auto* attribute = runs[1];
    auto* analyze = runs[2];

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            require(fs::exists(spec_path), ErrorKind::Config, fmt::format("{} does not exist", spec_path.string()));
            const auto spec = load_spec(spec_path);
            const auto corpus = generate_corpus(spec);
            if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
            save_corpus(corpus, spec, out_path);
            std::cout << fmt::format("wrote {} examples to {}\n", corpus.size(), out_path.string());
        } else if (plant_cmd->parsed()) {
            require(fs::exists(spec_path), ErrorKind::Config, fmt::format("{} does not exist", spec_path.string()));
            const auto spec = load_spec(spec_path);
            ModelConfig config;
            if (!model_config_path.empty()) {
                std::ifstream in(model_config_path);
                require(in.good(), ErrorKind::Config, fmt::format("cannot open {}", model_config_path.string()));
                json j = json::parse(in, nullptr, false);
                require(!j.is_discarded(), ErrorKind::Config, "model config is not valid JSON");
                config = model_config_from_json(j);
            }
            config.vocab_size = spec.vocab_size();
            const auto weights = plant_model(spec, config, plant);
            if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
            save_weights(weights, out_path);
            const auto reloaded = load_weights(out_path);
            require(reloaded.layers == weights.layers && reloaded.embed == weights.embed, ErrorKind::Numerical,
                    "weights did not survive a save/load round trip");
            check_planted_head(reloaded, spec, generate_corpus(spec), plant);
            std::cout << fmt::format("wrote planted model to {}\n", out_path.string());
        } else if (eval->parsed()) {
            const auto config = resolve_config(config_path, collect_flags(eval->remaining()));
            const auto ws = load_workspace(config);
            const auto out = run_eval(config, ws);
            write_json(config.output_dir / "eval.json", out.document);
            std::cout << fmt::format("accuracy {:.4f} over {} episodes; macro F1 {:.4f}\n", out.mean_accuracy,
                                     out.episode_accuracies.size(), out.report.macro_f1);
        } else if (attribute->parsed()) {
            const auto config = resolve_config(config_path, collect_flags(attribute->remaining()));
            const auto ws = load_workspace(config);
            const auto out = run_attribute(config, ws);
            const auto mode = config.per_layer ? HeatmapMode::PerLayer : HeatmapMode::PerQuery;
            write_json(config.output_dir / "attribution.json", out.document);
            for (std::size_t i = 0; i < out.queries.size(); ++i) {
                const auto q = out.document["queries"][i]["query"].get<std::size_t>();
                write_text(config.output_dir / fmt::format("query_{:03d}.svg", q), render_svg(out.queries[i], mode));
            }
            write_text(config.output_dir / "attribution.html", render_html(out.queries, mode));
            std::cout << fmt::format("attributed {} queries into {}\n", out.queries.size(), config.output_dir.string());
        } else if (analyze->parsed()) {
            const auto config = resolve_config(config_path, collect_flags(analyze->remaining()));
            std::optional<Workspace> ws;
            if (!config.weights.empty() || !config.corpus.empty()) {
                ws = load_workspace(config);
            }
            const auto doc = run_analyze(config, ws ? &*ws : nullptr);
            write_json(config.output_dir / "analysis.json", doc);
            std::cout << fmt::format("wrote {}\n", (config.output_dir / "analysis.json").string());
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
