#include "reltrace/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "reltrace/error.hpp"

namespace reltrace {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        require(e > 0, ErrorKind::Shape, "tensor extents must be positive");
        n *= e;
    }
    return n;
}

void require_finite(std::span<const double> v, const char* op) {
    for (double x : v) {
        require(std::isfinite(x), ErrorKind::Numerical, std::string(op) + ": non-finite input");
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    require(element_count(shape_) == data_.size(), ErrorKind::Shape,
            "tensor data length does not match shape");
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    require(rows.size() > 0, ErrorKind::Shape, "empty matrix literal");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        require(r.size() == cols, ErrorKind::Shape, "ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0;
    }
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    require(axis < shape_.size(), ErrorKind::Shape, "axis out of range");
    return shape_[axis];
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t cols = shape_.back();
    return std::span<double>(data_).subspan(r * cols, cols);
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t cols = shape_.back();
    return std::span<const double>(data_).subspan(r * cols, cols);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, ErrorKind::Shape, "matmul expects rank-2 tensors");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    require(b.extent(0) == k, ErrorKind::Shape, "matmul inner extents disagree");
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) {
                continue;
            }
            const auto brow = b.row(p);
            auto orow = out.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += aip * brow[j];
            }
        }
    }
    return out;
}

std::vector<double> vecmat(std::span<const double> x, const Tensor& m) {
    require(m.rank() == 2 && m.extent(0) == x.size(), ErrorKind::Shape,
            "vecmat: vector length does not match matrix rows");
    std::vector<double> out(m.extent(1), 0.0);
    for (std::size_t p = 0; p < x.size(); ++p) {
        if (x[p] == 0.0) {
            continue;
        }
        const auto mrow = m.row(p);
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += x[p] * mrow[j];
        }
    }
    return out;
}

std::vector<double> softmax(std::span<const double> v, double temperature) {
    require(!v.empty(), ErrorKind::Shape, "softmax of empty vector");
    require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::Argument,
            "softmax temperature must be positive");
    require_finite(v, "softmax");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp((v[i] - mx) / temperature);
        total += out[i];
    }
    for (double& o : out) {
        o /= total;
    }
    return out;
}

Tensor softmax(const Tensor& v, double temperature) {
    require(v.rank() == 1, ErrorKind::Shape, "softmax expects a rank-1 tensor");
    return Tensor::vector(softmax(v.data(), temperature));
}

RmsNormResult rmsnorm(std::span<const double> x, std::span<const double> gamma, double eps) {
    require(!x.empty() && x.size() == gamma.size(), ErrorKind::Shape, "rmsnorm extent mismatch");
    require(eps >= 0.0, ErrorKind::Argument, "rmsnorm eps must be non-negative");
    require_finite(x, "rmsnorm");
    double ss = 0.0;
    for (double v : x) {
        ss += v * v;
    }
    const double denom = ss / static_cast<double>(x.size()) + eps;
    require(denom > 0.0, ErrorKind::Numerical, "rmsnorm of zero vector with eps = 0");
    RmsNormResult r;
    r.scale = 1.0 / std::sqrt(denom);
    r.y.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.y[i] = gamma[i] * (r.scale * x[i]);
    }
    return r;
}

double silu(double x) noexcept { return x / (1.0 + std::exp(-x)); }

Tensor silu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) {
        v = silu(v);
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::Shape, "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

std::uint64_t Rng::next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
    require(n > 0, ErrorKind::Argument, "Rng::below(0)");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) {
        v = next_u64();
    }
    return v % n;
}

double Rng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    Rng r(seed ^ (index * 0xD1B54A32D192ED03ULL));
    r.next_u64();
    return r.next_u64();
}

}  // namespace reltrace
