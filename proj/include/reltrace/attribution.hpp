#pragma once

// Probe-side attribution: split a linear probe's decision over attention heads
// (HeadScore) and over source tokens (TokenScore).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reltrace/probing.hpp"

namespace reltrace {

struct ContrastDirection {
    std::vector<double> delta_w;                 // W_ĉ − Σ_{c≠ĉ} π_c W_c
    std::map<std::uint32_t, double> pi;          // competing class -> weight
    std::uint32_t predicted = 0;
    double temperature = 1.0;
};

ContrastDirection contrast_direction(const ProbeModel& probe, std::span<const double> x, double temperature = 1.0);

using HeadKey = std::pair<std::uint32_t, std::uint32_t>;  // (layer, head)
using HeadScoreGrid = std::map<HeadKey, double>;

HeadScoreGrid head_score(const ProbeModel& probe, std::span<const double> x, const ContrastDirection& direction);

struct TokenScoreMap {
    std::vector<std::vector<double>> per_layer;  // [layer][j], j in 0..t
    std::vector<double> aggregated;              // Σ over layers
};

TokenScoreMap token_score(const ProbeModel& probe, const TraceBundle& trace, const ModelWeights& weights,
                          std::uint32_t t, const ContrastDirection& direction);

// Fewest heads, by descending |score| (ties by (layer, head)), covering `fraction` of Σ|score|.
std::size_t concentration(const HeadScoreGrid& grid, double fraction = 0.95);

// Heads in descending |score| order with the same tie rule as concentration.
std::vector<HeadKey> rank_heads(const HeadScoreGrid& grid);

// Mean of Attn_h(t, j) over all layers and heads, for j in 0..t.
std::vector<double> avg_attention(const TraceBundle& trace, std::uint32_t t);

struct QueryAttribution {
    std::vector<std::string> tokens;
    std::uint32_t t = 0;
    std::string predicted;
    std::string gold;
    std::vector<double> logits;
    ContrastDirection direction;
    double contrast_total = 0.0;  // ΔW · x
    HeadScoreGrid heads;
    TokenScoreMap token_scores;
    std::vector<double> avg_attention;
    double head_completeness_error = 0.0;   // |Σ HeadScore − ΔW·x|
    double token_completeness_error = 0.0;  // |Σ TokenScore − ΔW·x|
};

nlohmann::json to_json(const QueryAttribution& q, const std::vector<std::string>& class_names);

enum class HeatmapMode { PerQuery, PerLayer };

// Negative scores are clipped to zero only here, when mapping to colour.
std::string render_svg(const QueryAttribution& q, HeatmapMode mode);
std::string render_html(const std::vector<QueryAttribution>& queries, HeatmapMode mode);

}  // namespace reltrace
