#include "reltrace/attribution.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "reltrace/error.hpp"

namespace reltrace {

ContrastDirection contrast_direction(const ProbeModel& probe, std::span<const double> x, double temperature) {
    const std::size_t C = probe.n_classes();
    require(C >= 2, ErrorKind::Argument, "contrast direction needs at least two classes");
    const Prediction pred = predict(probe, x);
    ContrastDirection dir;
    dir.predicted = pred.cls;
    dir.temperature = temperature;

    std::vector<double> others;
    std::vector<std::uint32_t> ids;
    for (std::uint32_t c = 0; c < C; ++c) {
        if (c != pred.cls) {
            others.push_back(pred.logits[c]);
            ids.push_back(c);
        }
    }
    const auto pi = softmax(others, temperature);
    const auto own = probe.weight.row(pred.cls);
    dir.delta_w.assign(own.begin(), own.end());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        dir.pi[ids[k]] = pi[k];
        const auto wc = probe.weight.row(ids[k]);
        for (std::size_t m = 0; m < dir.delta_w.size(); ++m) {
            dir.delta_w[m] -= pi[k] * wc[m];
        }
    }
    return dir;
}

namespace {

void require_head_probe(const ProbeModel& probe, const ContrastDirection& dir) {
    require(probe.kind == FeatureKind::AttnHead, ErrorKind::Argument,
            "head/token attribution needs a probe over per-head attention contributions, got " +
                std::string(to_string(probe.kind)));
    require(dir.delta_w.size() == probe.n_features(), ErrorKind::Shape, "direction length differs from probe");
    for (const auto& f : probe.index) {
        require(f.head != kSummedHead, ErrorKind::Argument, "probe index map has head-summed features");
    }
}

}  // namespace

HeadScoreGrid head_score(const ProbeModel& probe, std::span<const double> x, const ContrastDirection& dir) {
    require_head_probe(probe, dir);
    require(x.size() == probe.n_features(), ErrorKind::Shape, "input length differs from probe");
    HeadScoreGrid grid;
    for (std::size_t m = 0; m < x.size(); ++m) {
        grid[{probe.index[m].layer, probe.index[m].head}] += dir.delta_w[m] * x[m];
    }
    return grid;
}

TokenScoreMap token_score(const ProbeModel& probe, const TraceBundle& trace, const ModelWeights& weights,
                          std::uint32_t t, const ContrastDirection& dir) {
    require_head_probe(probe, dir);
    require(t < trace.seq_len(), ErrorKind::Argument, "target position out of range");
    const ModelConfig& cfg = trace.config;

    // Fold ΔW into one residual-space read-out vector per head used by the probe.
    std::map<HeadKey, std::vector<double>> readout;
    for (std::size_t m = 0; m < probe.index.size(); ++m) {
        const auto& f = probe.index[m];
        require(f.layer < cfg.n_layers && f.head < cfg.n_heads && f.dim < cfg.d_model, ErrorKind::Argument,
                "probe feature outside the traced model");
        auto& u = readout[{f.layer, f.head}];
        if (u.empty()) {
            u.assign(cfg.d_model, 0.0);
        }
        u[f.dim] += dir.delta_w[m];
    }

    TokenScoreMap out;
    out.per_layer.assign(cfg.n_layers, std::vector<double>(t + 1, 0.0));
    out.aggregated.assign(t + 1, 0.0);
    for (const auto& [key, u] : readout) {
        const auto [layer, head] = key;
        for (std::uint32_t j = 0; j <= t; ++j) {
            const auto c = head_token_contribution(trace, weights, layer, head, t, j);
            out.per_layer[layer][j] += dot(c.vec, u);
        }
    }
    for (const auto& row : out.per_layer) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            out.aggregated[j] += row[j];
        }
    }
    return out;
}

std::vector<HeadKey> rank_heads(const HeadScoreGrid& grid) {
    std::vector<HeadKey> keys;
    for (const auto& [k, v] : grid) {
        keys.push_back(k);
    }
    // Map iteration is already (layer, head) ascending; stable sort keeps that for ties.
    std::stable_sort(keys.begin(), keys.end(),
                     [&](const HeadKey& a, const HeadKey& b) { return std::abs(grid.at(a)) > std::abs(grid.at(b)); });
    return keys;
}

std::size_t concentration(const HeadScoreGrid& grid, double fraction) {
    require(!grid.empty(), ErrorKind::Argument, "concentration of an empty grid");
    require(fraction > 0.0 && fraction <= 1.0, ErrorKind::Argument, "fraction must be in (0, 1]");
    double total = 0.0;
    for (const auto& [k, v] : grid) {
        total += std::abs(v);
    }
    require(total > 0.0, ErrorKind::Argument, "concentration of an all-zero grid");
    const auto order = rank_heads(grid);
    double cum = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cum += std::abs(grid.at(order[i]));
        if (cum >= fraction * total) {
            return i + 1;
        }
    }
    return order.size();
}

std::vector<double> avg_attention(const TraceBundle& trace, std::uint32_t t) {
    require(t < trace.seq_len(), ErrorKind::Argument, "target position out of range");
    const ModelConfig& cfg = trace.config;
    std::vector<double> out(t + 1, 0.0);
    for (const auto& lt : trace.layers) {
        for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
            for (std::uint32_t j = 0; j <= t; ++j) {
                out[j] += lt.attn_weights.at(h, t, j);
            }
        }
    }
    const double n = static_cast<double>(cfg.n_layers) * cfg.n_heads;
    for (double& v : out) {
        v /= n;
    }
    return out;
}

nlohmann::json to_json(const QueryAttribution& q, const std::vector<std::string>& class_names) {
    nlohmann::json j;
    j["tokens"] = q.tokens;
    j["t"] = q.t;
    j["predicted"] = q.predicted;
    j["gold"] = q.gold;
    j["logits"] = q.logits;
    nlohmann::json pi = nlohmann::json::object();
    for (const auto& [c, w] : q.direction.pi) {
        pi[c < class_names.size() ? class_names[c] : std::to_string(c)] = w;
    }
    j["pi"] = pi;
    j["temperature"] = q.direction.temperature;
    j["contrast_total"] = q.contrast_total;
    auto heads = nlohmann::json::array();
    for (const auto& [k, v] : q.heads) {
        heads.push_back({{"layer", k.first}, {"head", k.second}, {"score", v}});
    }
    j["head_scores"] = heads;
    j["token_scores_per_layer"] = q.token_scores.per_layer;
    j["token_scores"] = q.token_scores.aggregated;
    j["avg_attention"] = q.avg_attention;
    j["completeness"] = {{"heads_abs_error", q.head_completeness_error},
                         {"tokens_abs_error", q.token_completeness_error}};
    return j;
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// White to red for the clipped positive part of a score normalised by `peak`.
std::string colour(double score, double peak) {
    const double v = peak > 0.0 ? std::clamp(score / peak, 0.0, 1.0) : 0.0;
    const int gb = static_cast<int>(std::lround(255.0 * (1.0 - v)));
    return fmt::format("#ff{:02x}{:02x}", gb, gb);
}

double positive_peak(std::span<const double> row) {
    double peak = 0.0;
    for (double v : row) {
        peak = std::max(peak, v);
    }
    return peak;
}

constexpr int kCellW = 44;
constexpr int kCellH = 22;
constexpr int kLabelW = 96;
constexpr int kHeaderH = 90;

}  // namespace

std::string render_svg(const QueryAttribution& q, HeatmapMode mode) {
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    if (mode == HeatmapMode::PerQuery) {
        rows.emplace_back("TokenScore", q.token_scores.aggregated);
        rows.emplace_back("avg. attn", q.avg_attention);
    } else {
        for (std::size_t l = 0; l < q.token_scores.per_layer.size(); ++l) {
            rows.emplace_back(fmt::format("layer {}", l), q.token_scores.per_layer[l]);
        }
    }
    const std::size_t ncols = q.t + 1;
    // Per-query mode normalises TokenScore over the whole query; per-layer mode normalises each row.
    double shared_peak = 0.0;
    if (mode == HeatmapMode::PerQuery) {
        shared_peak = positive_peak(q.token_scores.aggregated);
    }
    const int width = kLabelW + static_cast<int>(ncols) * kCellW + 10;
    const int height = kHeaderH + static_cast<int>(rows.size()) * kCellH + 30;

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"monospace\" "
        "font-size=\"10\">\n",
        width, height);
    svg += fmt::format("<text x=\"4\" y=\"14\">predicted: {} | gold: {}</text>\n", escape(q.predicted),
                       escape(q.gold));
    for (std::size_t j = 0; j < ncols; ++j) {
        const int x = kLabelW + static_cast<int>(j) * kCellW + kCellW / 2;
        const std::string label = j < q.tokens.size() ? q.tokens[j] : "";
        svg += fmt::format("<text transform=\"translate({},{}) rotate(-60)\">{}</text>\n", x, kHeaderH - 4,
                           escape(label));
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& [name, values] = rows[r];
        const int y = kHeaderH + static_cast<int>(r) * kCellH;
        svg += fmt::format("<text x=\"4\" y=\"{}\">{}</text>\n", y + 15, escape(name));
        double peak = positive_peak(values);
        if (mode == HeatmapMode::PerQuery && r == 0) {
            peak = shared_peak;
        }
        for (std::size_t j = 0; j < ncols && j < values.size(); ++j) {
            const int x = kLabelW + static_cast<int>(j) * kCellW;
            svg += fmt::format(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#cccccc\"><title>{:.6g}"
                "</title></rect>\n",
                x, y, kCellW, kCellH, colour(values[j], peak), values[j]);
        }
    }
    svg += fmt::format("<text x=\"4\" y=\"{}\">negative scores are not coloured</text>\n", height - 8);
    svg += "</svg>\n";
    return svg;
}

std::string render_html(const std::vector<QueryAttribution>& queries, HeatmapMode mode) {
    std::string html =
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>TokenScore attribution</title></head><body>\n";
    for (std::size_t i = 0; i < queries.size(); ++i) {
        html += fmt::format("<h3>query {}</h3>\n", i);
        html += render_svg(queries[i], mode);
    }
    html += "</body></html>\n";
    return html;
}

}  // namespace reltrace
