#pragma once

// Contribution features read off a TraceBundle: per-head, per-source-token,
// entity-restricted, and MLP-propagated (frozen norm scale and gate) variants.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reltrace/model.hpp"

namespace reltrace {

enum class FeatureKind : std::uint32_t {
    AttnHead = 0,        // Δ_att,h(t)
    AttnTokenTotal = 1,  // Δ_att,e1
    AttnTokenHead = 2,   // Δ_att,e1,h
    MlpHead = 3,         // Δ_MLP,h
    MlpTokenTotal = 4,   // Δ_MLP,e1
    MlpTokenHead = 5,    // Δ_MLP,e1,h
    FullAttention = 6,   // attention sublayer output
    FullMLP = 7,         // post-SiGLU activation, before the down projection
};

inline constexpr std::uint32_t kFeatureKindCount = 8;

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);
bool needs_entity(FeatureKind kind);
bool is_per_head(FeatureKind kind);
bool is_mlp(FeatureKind kind);

struct Contribution {
    std::uint32_t layer = 0;
    std::optional<std::uint32_t> head;    // absent for head-summed kinds
    std::uint32_t target = 0;
    std::optional<std::uint32_t> source;  // absent for source-summed kinds
    std::vector<double> vec;              // R^{d_model} (attention) or R^{d_ff} (MLP)
};

Contribution head_contribution(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                               std::uint32_t head, std::uint32_t t);

Contribution head_token_contribution(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                                     std::uint32_t head, std::uint32_t t, std::uint32_t j);

struct EntityContributions {
    std::vector<Contribution> per_head;
    Contribution total;
};

EntityContributions entity_contributions(const TraceBundle& trace, const ModelWeights& weights,
                                         std::uint32_t layer, std::uint32_t t, std::uint32_t j_e1);

// g[l][t] ⊙ W_up^T (gamma ⊙ r[l][t] ⊙ delta): the MLP map linearised around the full pass.
Contribution mlp_propagate(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                           std::uint32_t t, const Contribution& delta);

inline constexpr std::uint32_t kSummedHead = 0xFFFFFFFFu;

struct FeatureIndex {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;  // kSummedHead for head-summed kinds
    std::uint32_t dim = 0;

    friend bool operator==(const FeatureIndex&, const FeatureIndex&) = default;
    friend auto operator<=>(const FeatureIndex&, const FeatureIndex&) = default;
};

using FeatureIndexMap = std::vector<FeatureIndex>;

// Lexicographic (layer, head, dim) layout used by extract_features.
FeatureIndexMap feature_index_map(const ModelConfig& config, FeatureKind kind);

struct FeatureVector {
    std::vector<double> values;
    FeatureIndexMap index;
};

FeatureVector extract_features(const TraceBundle& trace, const ModelWeights& weights, FeatureKind kind,
                               std::uint32_t t, std::optional<std::uint32_t> j_e1 = std::nullopt);

// Feature dump: sections features [N x M] f32, index_map [M x 3] u32, labels [N] u32,
// kind [1] u32, plus a JSON sidecar "<path>.json" naming the classes.
struct FeatureDump {
    FeatureKind kind = FeatureKind::AttnHead;
    std::size_t rows = 0;
    std::vector<double> features;  // row-major [rows x index.size()]
    FeatureIndexMap index;
    std::vector<std::uint32_t> labels;
    std::vector<std::string> class_names;
};

inline constexpr std::uint32_t kFeatureDumpVersion = 1;

void save_feature_dump(const FeatureDump& dump, const std::filesystem::path& path);
FeatureDump load_feature_dump(const std::filesystem::path& path);

}  // namespace reltrace
