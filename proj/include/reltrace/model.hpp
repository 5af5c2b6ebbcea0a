#pragma once

// LLaMA-style pre-norm decoder whose forward pass caches everything needed to
// decompose attention and MLP sublayers into per-head / per-source-token terms.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "reltrace/numerics.hpp"

namespace reltrace {

using TokenId = std::uint32_t;

struct ModelConfig {
    std::uint32_t n_layers = 2;
    std::uint32_t n_heads = 4;
    std::uint32_t d_model = 64;
    std::uint32_t d_head = 16;
    std::uint32_t d_ff = 128;
    std::uint32_t vocab_size = 256;
    std::uint32_t max_seq_len = 256;
    bool use_rope = false;
    double norm_eps = 1e-6;
    double rope_theta = 10000.0;

    // Throws ErrorKind::Config on d_model != n_heads * d_head or zero extents.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Row-vector convention: q = x * wq. Head h owns columns [h*d_head, (h+1)*d_head)
// of wq/wk/wv and rows [h*d_head, (h+1)*d_head) of wo (its W_{O,h} slice).
struct LayerWeights {
    Tensor attn_norm;  // [d_model]
    Tensor wq;         // [d_model x d_model]
    Tensor wk;
    Tensor wv;
    Tensor wo;         // [d_model x d_model]
    Tensor mlp_norm;   // [d_model]
    Tensor w_gate;     // [d_model x d_ff]
    Tensor w_up;       // [d_model x d_ff]
    Tensor w_down;     // [d_ff x d_model]

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
    ModelConfig config;
    Tensor embed;       // [vocab x d_model]
    std::vector<LayerWeights> layers;
    Tensor final_norm;  // [d_model]
    Tensor unembed;     // [d_model x vocab]

    // Shape check against config; throws ErrorKind::Config.
    void validate() const;

    double wo_head(std::uint32_t layer, std::uint32_t head, std::uint32_t i, std::uint32_t col) const {
        return layers[layer].wo.at(static_cast<std::size_t>(head) * config.d_head + i, col);
    }

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

struct LayerTrace {
    Tensor resid_pre;     // [T x d_model] input to the attention sublayer
    Tensor resid_mid;     // [T x d_model] after x + attn(x); input to the MLP sublayer
    Tensor resid_post;    // [T x d_model] after x + mlp(x)
    Tensor attn_norm_scale;  // [T] rmsnorm scale of the attention input
    Tensor attn_weights;  // [H x T x T], row t is causal and sums to one
    Tensor values;        // [H x T x d_head], V_h(j)
    Tensor attn_out;      // [T x d_model] attention sublayer output (post W_O)
    Tensor mlp_norm_scale;  // [T] frozen rmsnorm scale r[t]
    Tensor gate;          // [T x d_ff] frozen SiLU(W_gate norm(x_t))
    Tensor up;            // [T x d_ff] W_up norm(x_t)
    Tensor mlp_act;       // [T x d_ff] gate * up, measured before the down projection
    Tensor mlp_out;       // [T x d_model]

    friend bool operator==(const LayerTrace&, const LayerTrace&) = default;
};

struct TraceBundle {
    ModelConfig config;
    std::vector<TokenId> tokens;
    std::vector<LayerTrace> layers;
    Tensor logits;  // [T x vocab]

    std::size_t seq_len() const noexcept { return tokens.size(); }

    friend bool operator==(const TraceBundle&, const TraceBundle&) = default;
};

TraceBundle forward(const ModelWeights& weights, std::span<const TokenId> tokens);

// Gaussian init with the given scale; every value is rounded through f32 so the
// weight container round-trips bit-exactly.
ModelWeights random_weights(const ModelConfig& config, Rng& rng, double scale = 0.2);

// Applies rotary embedding in place to one head vector at position pos
// (adjacent pairs (2i, 2i+1) rotated by pos * theta^(-2i/d_head)).
void apply_rope(std::span<double> head_vec, std::size_t pos, double theta);

inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace reltrace
