#pragma once

// Shared fixtures for the unit tests: random models and prompts, and a
// straight-line forward pass written without any of the library kernels.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "reltrace/model.hpp"
#include "reltrace/numerics.hpp"

namespace testing {

using reltrace::ModelConfig;
using reltrace::ModelWeights;
using reltrace::Rng;
using reltrace::TokenId;

inline ModelConfig small_config(std::uint32_t layers = 2, std::uint32_t heads = 2, std::uint32_t d_head = 4,
                                std::uint32_t d_ff = 12, std::uint32_t vocab = 20) {
    ModelConfig c;
    c.n_layers = layers;
    c.n_heads = heads;
    c.d_head = d_head;
    c.d_model = heads * d_head;
    c.d_ff = d_ff;
    c.vocab_size = vocab;
    c.max_seq_len = 64;
    return c;
}

inline std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::uint32_t vocab) {
    std::vector<TokenId> t(n);
    for (auto& v : t) v = static_cast<TokenId>(rng.below(vocab));
    return t;
}

inline reltrace::Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    reltrace::Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

// Hidden states per layer (resid_post) and final logits.
struct ReferenceOutput {
    std::vector<std::vector<std::vector<double>>> resid_post;  // [layer][t][d]
    std::vector<std::vector<double>> logits;
};

inline ReferenceOutput reference_forward(const ModelWeights& w, const std::vector<TokenId>& tokens) {
    const auto& c = w.config;
    const std::size_t T = tokens.size(), d = c.d_model, dh = c.d_head, H = c.n_heads, F = c.d_ff;
    auto norm = [&](const std::vector<double>& x, const reltrace::Tensor& g) {
        double ss = 0;
        for (double v : x) ss += v * v;
        const double r = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + c.norm_eps);
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * x[i] * r;
        return y;
    };
    auto mul = [](const std::vector<double>& x, const reltrace::Tensor& m) {
        const std::size_t rows = m.shape()[0], cols = m.shape()[1];
        std::vector<double> y(cols, 0.0);
        for (std::size_t j = 0; j < cols; ++j)
            for (std::size_t i = 0; i < rows; ++i) y[j] += x[i] * m[i * cols + j];
        return y;
    };
    auto rope = [&](std::vector<double>& v, std::size_t head, std::size_t pos) {
        for (std::size_t i = 0; 2 * i + 1 < dh; ++i) {
            const double ang = static_cast<double>(pos) * std::pow(c.rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
            const std::size_t a = head * dh + 2 * i, b = a + 1;
            const double x0 = v[a], x1 = v[b];
            v[a] = x0 * std::cos(ang) - x1 * std::sin(ang);
            v[b] = x0 * std::sin(ang) + x1 * std::cos(ang);
        }
    };

    std::vector<std::vector<double>> x(T, std::vector<double>(d));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) x[t][i] = w.embed[tokens[t] * d + i];

    ReferenceOutput out;
    for (const auto& L : w.layers) {
        std::vector<std::vector<double>> q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            const auto n = norm(x[t], L.attn_norm);
            q[t] = mul(n, L.wq);
            k[t] = mul(n, L.wk);
            v[t] = mul(n, L.wv);
            if (c.use_rope) {
                for (std::size_t h = 0; h < H; ++h) {
                    rope(q[t], h, t);
                    rope(k[t], h, t);
                }
            }
        }
        std::vector<std::vector<double>> next = x;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> concat(d, 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                std::vector<double> s(t + 1);
                double mx = -1e300;
                for (std::size_t j = 0; j <= t; ++j) {
                    double acc = 0;
                    for (std::size_t i = 0; i < dh; ++i) acc += q[t][h * dh + i] * k[j][h * dh + i];
                    s[j] = acc / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j <= t; ++j)
                    for (std::size_t i = 0; i < dh; ++i) concat[h * dh + i] += s[j] / z * v[j][h * dh + i];
            }
            const auto o = mul(concat, L.wo);
            for (std::size_t i = 0; i < d; ++i) next[t][i] += o[i];
        }
        x = next;
        for (std::size_t t = 0; t < T; ++t) {
            const auto n = norm(x[t], L.mlp_norm);
            const auto g = mul(n, L.w_gate);
            const auto u = mul(n, L.w_up);
            std::vector<double> a(F);
            for (std::size_t f = 0; f < F; ++f) a[f] = g[f] / (1.0 + std::exp(-g[f])) * u[f];
            const auto o = mul(a, L.w_down);
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
        }
        out.resid_post.push_back(x);
    }
    for (std::size_t t = 0; t < T; ++t) out.logits.push_back(mul(norm(x[t], w.final_norm), w.unembed));
    return out;
}

// Scratch directory unique to one test, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / ("reltrace_test_" + name)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing
