#pragma once

// Dense row-major kernels and a portable seedable generator.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace reltrace {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::vector<double> values);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 element access.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    // Rank-3 element access.
    double& at(std::size_t a, std::size_t b, std::size_t c) {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    double at(std::size_t a, std::size_t b, std::size_t c) const {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    // Contiguous innermost row selected by all leading indices of a rank-2 tensor.
    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

// y = x * m for a row vector x of length m.rows.
std::vector<double> vecmat(std::span<const double> x, const Tensor& m);

std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);
Tensor softmax(const Tensor& v, double temperature = 1.0);

struct RmsNormResult {
    std::vector<double> y;
    double scale = 0.0;  // 1 / sqrt(mean(x^2) + eps)
};

RmsNormResult rmsnorm(std::span<const double> x, std::span<const double> gamma, double eps);

double silu(double x) noexcept;
Tensor silu(const Tensor& x);

double dot(std::span<const double> a, std::span<const double> b);

// SplitMix64: state += 0x9E3779B97F4A7C15, then the standard xor-shift-multiply finaliser.
// Chosen because its transition is one line and trivially reproducible elsewhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) with 53 bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Standard normal via Box-Muller (no cached spare, so the stream stays position-independent).
    double normal() noexcept;

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

// Stateless mix of two words, used to derive per-episode seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept;

}  // namespace reltrace
