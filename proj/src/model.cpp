#include "reltrace/model.hpp"

#include <cmath>
#include <string>

#include "reltrace/container.hpp"
#include "reltrace/error.hpp"

namespace reltrace {

void ModelConfig::validate() const {
    require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_head >= 1 && d_ff >= 1 && vocab_size >= 1 &&
                max_seq_len >= 1,
            ErrorKind::Config, "model extents must be positive");
    require(d_model == n_heads * d_head, ErrorKind::Config,
            "d_model (" + std::to_string(d_model) + ") must equal n_heads * d_head (" +
                std::to_string(n_heads) + " * " + std::to_string(d_head) + ")");
    require(std::isfinite(norm_eps) && norm_eps >= 0.0, ErrorKind::Config, "norm_eps must be >= 0");
    require(!use_rope || d_head % 2 == 0, ErrorKind::Config, "RoPE needs an even d_head");
    require(std::isfinite(rope_theta) && rope_theta > 0.0, ErrorKind::Config, "rope_theta must be positive");
}

namespace {

void expect_shape(const Tensor& t, std::vector<std::size_t> shape, const std::string& name) {
    require(t.shape() == shape, ErrorKind::Config, "weight '" + name + "' has the wrong shape");
}

}  // namespace

void ModelWeights::validate() const {
    config.validate();
    const std::size_t d = config.d_model, f = config.d_ff, v = config.vocab_size;
    expect_shape(embed, {v, d}, "embed");
    require(layers.size() == config.n_layers, ErrorKind::Config, "layer count disagrees with config");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        expect_shape(L.attn_norm, {d}, p + "attn_norm");
        expect_shape(L.wq, {d, d}, p + "wq");
        expect_shape(L.wk, {d, d}, p + "wk");
        expect_shape(L.wv, {d, d}, p + "wv");
        expect_shape(L.wo, {d, d}, p + "wo");
        expect_shape(L.mlp_norm, {d}, p + "mlp_norm");
        expect_shape(L.w_gate, {d, f}, p + "w_gate");
        expect_shape(L.w_up, {d, f}, p + "w_up");
        expect_shape(L.w_down, {f, d}, p + "w_down");
    }
    expect_shape(final_norm, {d}, "final_norm");
    expect_shape(unembed, {d, v}, "unembed");
}

void apply_rope(std::span<double> head_vec, std::size_t pos, double theta) {
    const std::size_t dh = head_vec.size();
    for (std::size_t i = 0; i + 1 < dh; i += 2) {
        const double freq = std::pow(theta, -static_cast<double>(i) / static_cast<double>(dh));
        const double angle = static_cast<double>(pos) * freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = head_vec[i], b = head_vec[i + 1];
        head_vec[i] = a * c - b * s;
        head_vec[i + 1] = a * s + b * c;
    }
}

TraceBundle forward(const ModelWeights& weights, std::span<const TokenId> tokens) {
    const ModelConfig& cfg = weights.config;
    const std::size_t T = tokens.size();
    require(T >= 1, ErrorKind::Argument, "forward: empty token sequence");
    require(T <= cfg.max_seq_len, ErrorKind::Argument,
            "forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                std::to_string(cfg.max_seq_len));
    const std::size_t d = cfg.d_model, dh = cfg.d_head, H = cfg.n_heads, F = cfg.d_ff;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    TraceBundle tb;
    tb.config = cfg;
    tb.tokens.assign(tokens.begin(), tokens.end());

    Tensor x({T, d});
    for (std::size_t t = 0; t < T; ++t) {
        require(tokens[t] < cfg.vocab_size, ErrorKind::Argument,
                "forward: token id " + std::to_string(tokens[t]) + " out of range");
        const auto e = weights.embed.row(tokens[t]);
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }

    for (const LayerWeights& lw : weights.layers) {
        LayerTrace lt;
        lt.resid_pre = x;

        Tensor xn({T, d});
        lt.attn_norm_scale = Tensor({T});
        for (std::size_t t = 0; t < T; ++t) {
            auto n = rmsnorm(x.row(t), lw.attn_norm.data(), cfg.norm_eps);
            lt.attn_norm_scale[t] = n.scale;
            std::copy(n.y.begin(), n.y.end(), xn.row(t).begin());
        }
        Tensor q = matmul(xn, lw.wq);
        Tensor k = matmul(xn, lw.wk);
        const Tensor v = matmul(xn, lw.wv);
        if (cfg.use_rope) {
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t h = 0; h < H; ++h) {
                    apply_rope(q.row(t).subspan(h * dh, dh), t, cfg.rope_theta);
                    apply_rope(k.row(t).subspan(h * dh, dh), t, cfg.rope_theta);
                }
            }
        }

        lt.attn_weights = Tensor({H, T, T});
        lt.values = Tensor({H, T, dh});
        Tensor z({T, d});
        std::vector<double> scores;
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t j = 0; j < T; ++j) {
                for (std::size_t i = 0; i < dh; ++i) {
                    lt.values.at(h, j, i) = v.at(j, h * dh + i);
                }
            }
            for (std::size_t t = 0; t < T; ++t) {
                const auto qt = q.row(t).subspan(h * dh, dh);
                scores.assign(t + 1, 0.0);
                for (std::size_t j = 0; j <= t; ++j) {
                    scores[j] = dot(qt, k.row(j).subspan(h * dh, dh)) * inv_sqrt_dh;
                }
                const auto a = softmax(scores);
                for (std::size_t j = 0; j <= t; ++j) {
                    lt.attn_weights.at(h, t, j) = a[j];
                    for (std::size_t i = 0; i < dh; ++i) {
                        z.at(t, h * dh + i) += a[j] * lt.values.at(h, j, i);
                    }
                }
            }
        }
        lt.attn_out = matmul(z, lw.wo);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += lt.attn_out[i];
        }
        lt.resid_mid = x;

        Tensor mn({T, d});
        lt.mlp_norm_scale = Tensor({T});
        for (std::size_t t = 0; t < T; ++t) {
            auto n = rmsnorm(x.row(t), lw.mlp_norm.data(), cfg.norm_eps);
            lt.mlp_norm_scale[t] = n.scale;
            std::copy(n.y.begin(), n.y.end(), mn.row(t).begin());
        }
        lt.gate = silu(matmul(mn, lw.w_gate));
        lt.up = matmul(mn, lw.w_up);
        lt.mlp_act = Tensor({T, F});
        for (std::size_t i = 0; i < lt.mlp_act.size(); ++i) {
            lt.mlp_act[i] = lt.gate[i] * lt.up[i];
        }
        lt.mlp_out = matmul(lt.mlp_act, lw.w_down);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += lt.mlp_out[i];
        }
        lt.resid_post = x;
        tb.layers.push_back(std::move(lt));
    }

    Tensor xf({T, d});
    for (std::size_t t = 0; t < T; ++t) {
        auto n = rmsnorm(x.row(t), weights.final_norm.data(), cfg.norm_eps);
        std::copy(n.y.begin(), n.y.end(), xf.row(t).begin());
    }
    tb.logits = matmul(xf, weights.unembed);
    require(tb.logits.all_finite(), ErrorKind::Numerical, "forward produced non-finite logits");
    return tb;
}

namespace {

Tensor gaussian(std::vector<std::size_t> shape, Rng& rng, double scale) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = static_cast<double>(static_cast<float>(scale * rng.normal()));
    }
    return t;
}

Tensor ones(std::size_t n) { return Tensor({n}, 1.0); }

}  // namespace

ModelWeights random_weights(const ModelConfig& config, Rng& rng, double scale) {
    config.validate();
    const std::size_t d = config.d_model, f = config.d_ff, v = config.vocab_size;
    ModelWeights w;
    w.config = config;
    w.embed = gaussian({v, d}, rng, 1.0);
    for (std::uint32_t l = 0; l < config.n_layers; ++l) {
        LayerWeights lw;
        lw.attn_norm = ones(d);
        lw.wq = gaussian({d, d}, rng, scale);
        lw.wk = gaussian({d, d}, rng, scale);
        lw.wv = gaussian({d, d}, rng, scale);
        lw.wo = gaussian({d, d}, rng, scale);
        lw.mlp_norm = ones(d);
        lw.w_gate = gaussian({d, f}, rng, scale);
        lw.w_up = gaussian({d, f}, rng, scale);
        lw.w_down = gaussian({f, d}, rng, scale);
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = ones(d);
    w.unembed = gaussian({d, v}, rng, scale);
    return w;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    weights.validate();
    const ModelConfig& c = weights.config;
    container::Writer out(path, "RTRC", kWeightFormatVersion);
    out.u32(c.n_layers);
    out.u32(c.n_heads);
    out.u32(c.d_model);
    out.u32(c.d_head);
    out.u32(c.d_ff);
    out.u32(c.vocab_size);
    out.u32(c.max_seq_len);
    out.u32(c.use_rope ? 1 : 0);
    out.f64(c.norm_eps);
    out.f64(c.rope_theta);

    auto put = [&](const std::string& name, const Tensor& t) { out.section_f32(name, t.shape(), t.values()); };
    put("embed", weights.embed);
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        const auto& L = weights.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        put(p + "attn_norm", L.attn_norm);
        put(p + "wq", L.wq);
        put(p + "wk", L.wk);
        put(p + "wv", L.wv);
        put(p + "wo", L.wo);
        put(p + "mlp_norm", L.mlp_norm);
        put(p + "w_gate", L.w_gate);
        put(p + "w_up", L.w_up);
        put(p + "w_down", L.w_down);
    }
    put("final_norm", weights.final_norm);
    put("unembed", weights.unembed);
    out.close();
}

ModelWeights load_weights(const std::filesystem::path& path) {
    container::Reader in(path, "RTRC", kWeightFormatVersion);
    ModelWeights w;
    ModelConfig& c = w.config;
    c.n_layers = in.u32();
    c.n_heads = in.u32();
    c.d_model = in.u32();
    c.d_head = in.u32();
    c.d_ff = in.u32();
    c.vocab_size = in.u32();
    c.max_seq_len = in.u32();
    const std::uint32_t rope = in.u32();
    require(rope <= 1, ErrorKind::Data, "bad use_rope flag");
    c.use_rope = rope == 1;
    c.norm_eps = in.f64();
    c.rope_theta = in.f64();
    c.validate();
    require(c.n_layers <= 4096, ErrorKind::Data, "implausible layer count");
    w.layers.resize(c.n_layers);

    auto slot = [&](const std::string& name) -> Tensor* {
        if (name == "embed") return &w.embed;
        if (name == "final_norm") return &w.final_norm;
        if (name == "unembed") return &w.unembed;
        constexpr std::string_view prefix = "layers.";
        if (!name.starts_with(prefix)) return nullptr;
        const auto dot = name.find('.', prefix.size());
        if (dot == std::string::npos) return nullptr;
        std::size_t l = 0;
        try {
            l = std::stoul(name.substr(prefix.size(), dot - prefix.size()));
        } catch (const std::exception&) {
            return nullptr;
        }
        if (l >= w.layers.size()) return nullptr;
        auto& L = w.layers[l];
        const std::string field = name.substr(dot + 1);
        if (field == "attn_norm") return &L.attn_norm;
        if (field == "wq") return &L.wq;
        if (field == "wk") return &L.wk;
        if (field == "wv") return &L.wv;
        if (field == "wo") return &L.wo;
        if (field == "mlp_norm") return &L.mlp_norm;
        if (field == "w_gate") return &L.w_gate;
        if (field == "w_up") return &L.w_up;
        if (field == "w_down") return &L.w_down;
        return nullptr;
    };

    while (auto h = in.next_section()) {
        Tensor* dst = slot(h->name);
        require(dst != nullptr, ErrorKind::Data, "unknown section '" + h->name + "'");
        require(dst->size() == 0, ErrorKind::Data, "duplicate section '" + h->name + "'");
        *dst = Tensor(h->extents, in.payload_f32(*h));
    }
    try {
        w.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Data, std::string("weight file ") + path.string() + ": " + e.what());
    }
    return w;
}

}  // namespace reltrace
