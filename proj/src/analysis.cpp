#include "reltrace/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reltrace/error.hpp"

namespace reltrace {

ClassificationReport classification_report(std::span<const std::uint32_t> predictions,
                                           std::span<const std::uint32_t> golds,
                                           const std::vector<std::string>& names) {
    require(predictions.size() == golds.size(), ErrorKind::Shape, "predictions and golds differ in length");
    require(!golds.empty(), ErrorKind::Argument, "classification report over zero queries");
    std::map<std::uint32_t, std::size_t> tp, fp, fn, gold_count;
    std::set<std::uint32_t> seen;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const auto p = predictions[i], g = golds[i];
        seen.insert(p);
        seen.insert(g);
        ++gold_count[g];
        if (p == g) {
            ++tp[p];
            ++correct;
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
    ClassificationReport r;
    for (std::uint32_t c : seen) {
        ClassMetrics m;
        m.relation = c;
        m.name = c < names.size() ? names[c] : "R" + std::to_string(c);
        const double t = static_cast<double>(tp[c]);
        m.precision = ratio(t, t + static_cast<double>(fp[c]));
        m.recall = ratio(t, t + static_cast<double>(fn[c]));
        m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
        m.support = gold_count[c];
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
        r.per_class.push_back(std::move(m));
    }
    const double n = static_cast<double>(r.per_class.size());
    r.macro_precision /= n;
    r.macro_recall /= n;
    r.macro_f1 /= n;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(golds.size());
    return r;
}

nlohmann::json to_json(const ClassificationReport& report) {
    nlohmann::json j;
    auto rows = nlohmann::json::array();
    for (const auto& m : report.per_class) {
        rows.push_back({{"relation", m.relation},
                        {"name", m.name},
                        {"precision", m.precision},
                        {"recall", m.recall},
                        {"f1", m.f1},
                        {"support", m.support}});
    }
    j["per_class"] = rows;
    j["macro"] = {{"precision", report.macro_precision}, {"recall", report.macro_recall}, {"f1", report.macro_f1}};
    j["accuracy"] = report.accuracy;
    return j;
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), ErrorKind::Shape, "spearman: length mismatch");
    require(x.size() >= 2, ErrorKind::Argument, "spearman needs at least two points");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return std::nullopt;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double LexicalProfile::score(std::uint32_t relation, TokenId token) const {
    const auto it = std::find(relations.begin(), relations.end(), relation);
    require(it != relations.end(), ErrorKind::Argument, "relation not in the lexical profile");
    const auto& m = scores[static_cast<std::size_t>(it - relations.begin())];
    const auto s = m.find(token);
    return s == m.end() ? 0.0 : s->second;
}

LexicalProfile tfidf_profiles(const Episode& episode) {
    const std::size_t n = episode.relations.size();
    require(n >= 2, ErrorKind::Argument, "tf-idf profiles need at least two relations");
    require(!episode.support.empty(), ErrorKind::Argument, "tf-idf profiles need support prompts");
    std::vector<std::map<TokenId, double>> tf(n);
    for (const auto& p : episode.support) {
        auto& doc = tf[episode.class_of(p.relation)];
        for (TokenId id : p.tokens) {
            doc[id] += 1.0;
        }
    }
    std::map<TokenId, std::size_t> df;
    for (std::size_t r = 0; r < n; ++r) {
        require(!tf[r].empty(), ErrorKind::Argument, "relation without support prompts");
        for (const auto& [id, c] : tf[r]) {
            ++df[id];
        }
    }
    std::vector<std::map<TokenId, double>> tfidf(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (const auto& [id, c] : tf[r]) {
            tfidf[r][id] = c * std::log(static_cast<double>(n) / static_cast<double>(df[id]));
        }
    }
    auto value = [&](std::size_t r, TokenId id) {
        const auto it = tfidf[r].find(id);
        return it == tfidf[r].end() ? 0.0 : it->second;
    };
    LexicalProfile prof;
    prof.relations = episode.relations;
    prof.scores.resize(n);
    for (const auto& [id, count] : df) {
        for (std::size_t r = 0; r < n; ++r) {
            double others = 0.0;
            for (std::size_t o = 0; o < n; ++o) {
                if (o != r) {
                    others += value(o, id);
                }
            }
            prof.scores[r][id] = value(r, id) - others / static_cast<double>(n - 1);
        }
    }
    return prof;
}

AlignmentStats make_alignment(std::optional<double> rho, double mass, bool correct) {
    AlignmentStats s;
    s.rho = rho;
    s.mass = mass;
    s.prediction_correct = correct;
    s.strong_align = rho.has_value() && *rho >= kStrongAlignMinRho && mass >= kStrongAlignMinMass;
    return s;
}

AlignmentStats lexical_alignment(std::span<const double> token_scores, std::span<const TokenId> tokens,
                                 const LexicalProfile& profile, std::uint32_t predicted_relation, bool correct) {
    require(token_scores.size() == tokens.size(), ErrorKind::Shape, "TokenScore map and prompt tokens differ in length");
    require(!tokens.empty(), ErrorKind::Argument, "empty prompt");
    std::vector<double> lexical(tokens.size());
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        lexical[j] = profile.score(predicted_relation, tokens[j]);
    }
    std::optional<double> rho;
    if (tokens.size() >= 2) {
        rho = spearman(token_scores, lexical);
    }
    double positive = 0.0, aligned = 0.0;
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        if (token_scores[j] > 0.0) {
            positive += token_scores[j];
            if (lexical[j] > 0.0) {
                aligned += token_scores[j];
            }
        }
    }
    return make_alignment(rho, positive > 0.0 ? aligned / positive : 0.0, correct);
}

AlignmentSummary aggregate_alignment(std::span<const AlignmentStats> stats) {
    require(!stats.empty(), ErrorKind::Argument, "no alignment statistics to aggregate");
    AlignmentSummary s;
    s.queries = stats.size();
    double rho_sum = 0.0, mass_sum = 0.0;
    std::size_t rho_n = 0, strong_wrong = 0;
    for (const auto& a : stats) {
        if (a.rho) {
            rho_sum += *a.rho;
            ++rho_n;
        }
        mass_sum += a.mass;
        if (!a.prediction_correct) {
            ++s.incorrect;
            strong_wrong += a.strong_align ? 1 : 0;
        }
    }
    if (rho_n > 0) {
        s.mean_rho = rho_sum / static_cast<double>(rho_n);
    }
    s.mean_mass = mass_sum / static_cast<double>(stats.size());
    if (s.incorrect > 0) {
        s.strong_align_incorrect = static_cast<double>(strong_wrong) / static_cast<double>(s.incorrect);
    }
    return s;
}

namespace {

RelationStats checked(RelationStats r, const std::string& where) {
    require(!r.property_id.empty(), ErrorKind::Data, where + ": empty property id");
    require(r.output_range >= 1, ErrorKind::Data, where + ": output range must be >= 1");
    require(std::isfinite(r.mean_connection_count) && r.mean_connection_count >= 1.0, ErrorKind::Data,
            where + ": mean connection count must be >= 1");
    require(std::isfinite(r.tfidf_similarity) && r.tfidf_similarity >= 0.0, ErrorKind::Data,
            where + ": tf-idf similarity must be non-negative");
    return r;
}

double parse_number(std::string field, const std::string& where) {
    field.erase(std::remove(field.begin(), field.end(), ','), field.end());
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(field, &used);
    } catch (const std::exception&) {
        fail(ErrorKind::Data, where + ": not a number: '" + field + "'");
    }
    require(used == field.size(), ErrorKind::Data, where + ": not a number: '" + field + "'");
    return v;
}

}  // namespace

std::vector<RelationStats> parse_stats_tsv(std::istream& in) {
    std::vector<RelationStats> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream fields(line);
        std::vector<std::string> cols;
        std::string f;
        while (fields >> f) {
            cols.push_back(f);
        }
        if (cols.empty() || cols[0].starts_with('#') || cols[0] == "property_id") {
            continue;
        }
        const std::string where = "stats line " + std::to_string(lineno);
        require(cols.size() == 4, ErrorKind::Data, where + ": expected 4 columns, got " + std::to_string(cols.size()));
        const double range = parse_number(cols[1], where);
        require(range >= 0.0, ErrorKind::Data, where + ": negative output range");
        require(range == std::floor(range), ErrorKind::Data, where + ": output range must be an integer");
        const double conn = parse_number(cols[2], where);
        require(conn >= 0.0, ErrorKind::Data, where + ": negative connection count");
        RelationStats r;
        r.property_id = cols[0];
        r.output_range = static_cast<std::uint64_t>(range);
        r.mean_connection_count = conn;
        r.tfidf_similarity = parse_number(cols[3], where) * 1e-3;
        out.push_back(checked(std::move(r), where));
    }
    return out;
}

std::vector<RelationStats> parse_stats_json(const nlohmann::json& j) {
    std::vector<RelationStats> out;
    try {
        for (std::size_t i = 0; i < j.size(); ++i) {
            const auto& e = j.at(i);
            const std::string where = "stats entry " + std::to_string(i);
            const auto range = e.at("output_range").get<double>();
            require(range >= 0.0 && range == std::floor(range), ErrorKind::Data, where + ": bad output range");
            RelationStats r;
            r.property_id = e.at("property_id").get<std::string>();
            r.output_range = static_cast<std::uint64_t>(range);
            r.mean_connection_count = e.at("mean_connection_count").get<double>();
            r.tfidf_similarity = e.at("tfidf_similarity_e-3").get<double>() * 1e-3;
            out.push_back(checked(std::move(r), where));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, std::string("stats json: ") + e.what());
    }
    return out;
}

std::vector<RelationStats> ingest_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Data, "cannot open stats file " + path.string());
    if (path.extension() == ".json") {
        try {
            return parse_stats_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorKind::Data, std::string("stats json: ") + e.what());
        }
    }
    return parse_stats_tsv(in);
}

std::map<std::string, std::optional<double>> correlate(const std::map<std::string, double>& metric,
                                                       const std::vector<RelationStats>& stats,
                                                       const std::map<std::string, double>& concentration) {
    std::vector<double> m, range, conn, tfidf;
    for (const auto& s : stats) {
        const auto it = metric.find(s.property_id);
        if (it == metric.end()) {
            continue;
        }
        m.push_back(it->second);
        range.push_back(static_cast<double>(s.output_range));
        conn.push_back(s.mean_connection_count);
        tfidf.push_back(s.tfidf_similarity);
    }
    require(m.size() >= 3, ErrorKind::Data,
            "correlation needs at least 3 relations present in both the metric and the stats (" +
                std::to_string(m.size()) + " overlap)");
    std::map<std::string, std::optional<double>> out;
    out["output_range"] = spearman(m, range);
    out["mean_connection_count"] = spearman(m, conn);
    out["tfidf_similarity"] = spearman(m, tfidf);
    if (!concentration.empty()) {
        std::vector<double> a, b;
        for (const auto& [rel, v] : metric) {
            const auto it = concentration.find(rel);
            if (it != concentration.end()) {
                a.push_back(v);
                b.push_back(it->second);
            }
        }
        require(a.size() >= 3, ErrorKind::Data, "heads-for-95% correlation needs at least 3 relations");
        out["heads_for_95"] = spearman(a, b);
    }
    return out;
}

}  // namespace reltrace
