#include <doctest.h>

#include <cmath>
#include <fstream>

#include "reltrace/container.hpp"
#include "reltrace/error.hpp"
#include "reltrace/model.hpp"
#include "support.hpp"

using namespace reltrace;

TEST_SUITE_BEGIN("model");

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.d_model = 63;
    CHECK_THROWS_AS(c.validate(), Error);
    ModelConfig z;
    z.n_layers = 0;
    CHECK_THROWS_AS(z.validate(), Error);
}

TEST_CASE("single token attends to itself") {
    Rng rng(1);
    const auto w = random_weights(testing::small_config(3, 2), rng);
    const std::vector<TokenId> tok{4};
    const auto tr = forward(w, tok);
    for (const auto& L : tr.layers)
        for (std::uint32_t h = 0; h < 2; ++h) CHECK(L.attn_weights.at(h, 0, 0) == 1.0);
}

TEST_CASE("attention rows are causal and normalised") {
    Rng rng(2);
    const auto w = random_weights(testing::small_config(2, 3), rng, 0.6);
    const auto tokens = testing::random_tokens(rng, 9, 20);
    const auto tr = forward(w, tokens);
    for (const auto& L : tr.layers) {
        for (std::size_t h = 0; h < 3; ++h) {
            for (std::size_t t = 0; t < 9; ++t) {
                double sum = 0;
                for (std::size_t j = 0; j < 9; ++j) {
                    if (j > t) CHECK(L.attn_weights.at(h, t, j) == 0.0);
                    sum += L.attn_weights.at(h, t, j);
                }
                CHECK(std::abs(sum - 1.0) <= 1e-9);
            }
        }
    }
}

TEST_CASE("forward matches the straight-line reference") {
    for (bool rope : {false, true}) {
        Rng rng(rope ? 21 : 20);
        auto cfg = testing::small_config(2, 2);
        cfg.use_rope = rope;
        const auto w = random_weights(cfg, rng, 0.5);
        const auto tokens = testing::random_tokens(rng, 5, cfg.vocab_size);
        const auto tr = forward(w, tokens);
        const auto ref = testing::reference_forward(w, tokens);
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t t = 0; t < 5; ++t)
                for (std::size_t i = 0; i < cfg.d_model; ++i)
                    CHECK(std::abs(tr.layers[l].resid_post.at(t, i) - ref.resid_post[l][t][i]) <= 1e-9);
        for (std::size_t t = 0; t < 5; ++t)
            for (std::size_t v = 0; v < cfg.vocab_size; ++v)
                CHECK(std::abs(tr.logits.at(t, v) - ref.logits[t][v]) <= 1e-9);
    }
}

TEST_CASE("residual additivity and cached MLP quantities") {
    Rng rng(3);
    const auto w = random_weights(testing::small_config(2, 2, 4, 10), rng, 0.5);
    const auto tokens = testing::random_tokens(rng, 7, 20);
    const auto tr = forward(w, tokens);
    for (const auto& L : tr.layers) {
        for (std::size_t t = 0; t < 7; ++t) {
            for (std::size_t i = 0; i < 8; ++i) {
                CHECK(std::abs(L.resid_mid.at(t, i) - L.resid_pre.at(t, i) - L.attn_out.at(t, i)) <= 1e-9);
                CHECK(std::abs(L.resid_post.at(t, i) - L.resid_mid.at(t, i) - L.mlp_out.at(t, i)) <= 1e-9);
            }
            for (std::size_t f = 0; f < 10; ++f)
                CHECK(std::abs(L.mlp_act.at(t, f) - L.gate.at(t, f) * L.up.at(t, f)) <= 1e-12);
        }
    }
}

TEST_CASE("causality: later tokens leave earlier positions bit-identical") {
    Rng rng(4);
    const auto w = random_weights(testing::small_config(2, 2), rng, 0.5);
    auto tokens = testing::random_tokens(rng, 8, 20);
    const auto a = forward(w, tokens);
    tokens[6] = (tokens[6] + 1) % 20;
    tokens[7] = (tokens[7] + 3) % 20;
    const auto b = forward(w, tokens);
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t t = 0; t <= 5; ++t) {
            for (std::size_t i = 0; i < 8; ++i) {
                CHECK(a.layers[l].resid_post.at(t, i) == b.layers[l].resid_post.at(t, i));
                CHECK(a.layers[l].attn_out.at(t, i) == b.layers[l].attn_out.at(t, i));
            }
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t j = 0; j <= t; ++j)
                    CHECK(a.layers[l].attn_weights.at(h, t, j) == b.layers[l].attn_weights.at(h, t, j));
        }
    }
}

TEST_CASE("forward is deterministic") {
    Rng rng(5);
    const auto w = random_weights(testing::small_config(), rng);
    const auto tokens = testing::random_tokens(rng, 6, 20);
    CHECK(forward(w, tokens) == forward(w, tokens));
}

TEST_CASE("forward rejects bad input") {
    Rng rng(6);
    auto cfg = testing::small_config();
    cfg.max_seq_len = 4;
    const auto w = random_weights(cfg, rng);
    CHECK_THROWS_AS(forward(w, std::vector<TokenId>{}), Error);
    CHECK_THROWS_AS(forward(w, std::vector<TokenId>{1, 2, 3, 4, 5}), Error);
    CHECK_THROWS_AS(forward(w, std::vector<TokenId>{1, 20}), Error);
}

TEST_CASE("rope rotates pairs and preserves norm") {
    std::vector<double> v{1.0, 0.0, 3.0, 4.0};
    apply_rope(v, 0, 10000.0);
    CHECK(v == std::vector<double>{1.0, 0.0, 3.0, 4.0});
    apply_rope(v, 1, 10000.0);
    CHECK(v[0] == doctest::Approx(std::cos(1.0)));
    CHECK(v[1] == doctest::Approx(std::sin(1.0)));
    CHECK(v[2] * v[2] + v[3] * v[3] == doctest::Approx(25.0));
}

TEST_CASE("weights round-trip bit-exactly") {
    testing::TempDir dir("weights_roundtrip");
    Rng rng(7);
    auto cfg = testing::small_config(3, 2, 4, 6, 11);
    cfg.use_rope = true;
    const auto w = random_weights(cfg, rng);
    save_weights(w, dir.path / "m.rtrc");
    const auto back = load_weights(dir.path / "m.rtrc");
    CHECK(back == w);
}

TEST_CASE("weight container errors") {
    testing::TempDir dir("weights_errors");
    Rng rng(8);
    const auto w = random_weights(testing::small_config(), rng);
    const auto path = dir.path / "m.rtrc";
    save_weights(w, path);

    SUBCASE("corrupted magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        try {
            load_weights(path);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Data);
        }
    }
    SUBCASE("truncated file") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size - 7);
        CHECK_THROWS_AS(load_weights(path), Error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_weights(dir.path / "absent.rtrc"), Error);
    }
    SUBCASE("inconsistent config") {
        container::Writer out(path, "RTRC", kWeightFormatVersion);
        for (std::uint32_t v : {2u, 2u, 9u, 4u, 12u, 20u, 64u, 0u}) out.u32(v);
        out.f64(1e-6);
        out.f64(1e4);
        out.close();
        try {
            load_weights(path);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Config);
        }
    }
    SUBCASE("missing section") {
        container::Writer out(path, "RTRC", kWeightFormatVersion);
        for (std::uint32_t v : {2u, 2u, 8u, 4u, 12u, 20u, 64u, 0u}) out.u32(v);
        out.f64(1e-6);
        out.f64(1e4);
        out.section_f32("embed", {20, 8}, std::vector<double>(160, 0.0));
        out.close();
        CHECK_THROWS_AS(load_weights(path), Error);
    }
}

TEST_SUITE_END();
