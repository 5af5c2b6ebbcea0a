#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "reltrace/error.hpp"
#include "reltrace/numerics.hpp"
#include "support.hpp"

using namespace reltrace;

TEST_SUITE_BEGIN("numerics");

TEST_CASE("matmul by the identity returns the operand") {
    Rng rng(3);
    const auto x = testing::random_tensor(rng, {3, 4});
    CHECK(matmul(Tensor::identity(3), x) == x);
}

TEST_CASE("matmul hand example") {
    const auto y = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
    CHECK(y.shape() == std::vector<std::size_t>{2, 1});
    CHECK(y.at(0, 0) == 3.0);
    CHECK(y.at(1, 0) == 7.0);
}

TEST_CASE("matmul agrees with a triple loop") {
    Rng rng(11);
    const auto a = testing::random_tensor(rng, {5, 4});
    const auto b = testing::random_tensor(rng, {4, 3});
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
            CHECK(std::abs(c.at(i, j) - acc) <= 1e-12);
        }
    }
}

TEST_CASE("matmul is associative on small random tensors") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = testing::random_tensor(rng, {3, 4});
        const auto b = testing::random_tensor(rng, {4, 5});
        const auto c = testing::random_tensor(rng, {5, 2});
        const auto l = matmul(matmul(a, b), c);
        const auto r = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(l[i] - r[i]) <= 1e-9);
    }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), Error);
}

TEST_CASE("tensor construction checks the data length") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("softmax examples") {
    const auto u = softmax(std::vector<double>{0, 0, 0});
    for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(softmax(std::vector<double>{42.0})[0] == 1.0);

    const std::vector<double> x{1, 2, 3};
    const auto s = softmax(x);
    const double z = std::exp(1 - 3.0) + std::exp(2 - 3.0) + 1.0;
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(x[i] - 3.0) / z) <= 1e-15);
}

TEST_CASE("softmax is shift invariant and normalised for long inputs") {
    Rng rng(8);
    std::vector<double> v(4096);
    for (double& e : v) e = 50.0 * rng.normal();
    const auto a = softmax(v);
    double sum = 0;
    for (double e : a) {
        CHECK(e >= 0.0);
        sum += e;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    auto shifted = v;
    for (double& e : shifted) e += 1000.0;
    const auto b = softmax(shifted);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("softmax temperature and errors") {
    const std::vector<double> v{1.0, 3.0};
    const auto hot = softmax(v, 2.0);
    CHECK(hot[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}), Error);
    CHECK_THROWS_AS(softmax(std::vector<double>{}), Error);
    CHECK_THROWS_AS(softmax(v, 0.0), Error);
}

TEST_CASE("rmsnorm examples") {
    const std::vector<double> ones(5, 1.0);
    const auto r = rmsnorm(ones, ones, 0.0);
    CHECK(r.scale == 1.0);
    for (double v : r.y) CHECK(v == 1.0);

    Rng rng(2);
    std::vector<double> x(8), g(8);
    for (auto& v : x) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    const double eps = 1e-6;
    const auto y = rmsnorm(x, g, eps);
    double ss = 0;
    for (double v : x) ss += v * v;
    const double scale = 1.0 / std::sqrt(ss / 8.0 + eps);
    CHECK(std::abs(y.scale - scale) <= 1e-12);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(y.y[i] - g[i] * scale * x[i]) <= 1e-12);
}

TEST_CASE("rmsnorm is scale invariant without eps") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x(16), g(16);
        for (auto& v : x) v = rng.normal();
        for (auto& v : g) v = rng.normal();
        const double c = std::exp(4.0 * rng.normal());
        auto cx = x;
        for (auto& v : cx) v *= c;
        const auto a = rmsnorm(x, g, 0.0);
        const auto b = rmsnorm(cx, g, 0.0);
        for (int i = 0; i < 16; ++i) CHECK(std::abs(a.y[i] - b.y[i]) <= 1e-10);
    }
}

TEST_CASE("silu examples") {
    CHECK(silu(0.0) == 0.0);
    CHECK(silu(40.0) == doctest::Approx(40.0));
    CHECK(std::abs(silu(1.0) - 1.0 / (1.0 + std::exp(-1.0))) <= 1e-15);
    const auto t = silu(Tensor::vector({-1.0, 0.0, 2.0}));
    CHECK(t[2] == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("rng streams are reproducible and documented") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    // Reference SplitMix64 output for seed 0.
    Rng z(0);
    CHECK(z.next_u64() == 0xe220a8397b1dcdafULL);
    CHECK(z.next_u64() == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("rng helpers stay in range") {
    Rng rng(77);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = rng.below(7);
        CHECK(k < 7);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(rng.below(0), Error);
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
}

TEST_SUITE_END();
