#include "proxmmr/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "proxmmr/error.hpp"

namespace proxmmr {

namespace {

std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("Tensor::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return {r, c, std::move(data)};
}

Tensor Tensor::column(std::span<const double> values) {
    return {values.size(), 1, std::vector<double>(values.begin(), values.end())};
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Tensor& t) {
    return ConstView(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

View view(Tensor& t) {
    return View(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    Tensor c(a.rows(), b.cols());
    if (!c.empty() && a.cols() > 0) view(c).noalias() = view(a) * view(b);
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
    }
    Tensor c(a.cols(), b.cols());
    if (!c.empty() && a.rows() > 0) view(c).noalias() = view(a).transpose() * view(b);
    return c;
}

double dot(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
    constexpr std::size_t kLanes = 8;
    double acc[kLanes] = {};
    const std::size_t n = x.size();
    std::size_t j = 0;
    for (; j + kLanes <= n; j += kLanes)
        for (std::size_t c = 0; c < kLanes; ++c) acc[c] += x[j + c] * y[j + c];
    double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; j < n; ++j) s += x[j] * y[j];
    return s;
}

Tensor transpose(const Tensor& m) {
    Tensor t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Tensor add_row(const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != a.cols()) {
        throw DimensionError("add_row: " + shape_str(a) + " + " + shape_str(b));
    }
    Tensor c = a;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        auto row = c.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
    return c;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "subtract");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor c = a;
    for (auto& v : c.data()) v *= factor;
    return c;
}

Tensor relu(const Tensor& a) {
    Tensor c = a;
    for (auto& v : c.data()) v = v > 0.0 ? v : 0.0;
    return c;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

double mean(const Tensor& a) {
    if (a.empty()) throw DimensionError("mean: empty tensor");
    return sum(a) / static_cast<double>(a.size());
}

double squared_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

Tensor column_sums(const Tensor& a) {
    Tensor s(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto row = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) s[j] += row[j];
    }
    return s;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("hconcat: " + shape_str(a) + " | " + shape_str(b));
    }
    Tensor c(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = c.row(i);
        std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
        std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + a.cols());
    }
    return c;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
    Tensor out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) throw DimensionError("gather_rows: index out of range");
        std::copy(m.row(indices[i]).begin(), m.row(indices[i]).end(), out.row(i).begin());
    }
    return out;
}

Tensor linspace(double lo, double hi, std::size_t n) {
    Tensor t(n, 1);
    if (n == 1) {
        t[0] = lo;
        return t;
    }
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) t[i] = lo + step * static_cast<double>(i);
    t[n - 1] = hi;
    return t;
}

// ---------------------------------------------------------------------------
// Random numbers

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) {
        x += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        s = z ^ (z >> 31);
    }
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    const double x = lo + (hi - lo) * uniform01();
    // Rounding can land exactly on hi; keep the interval half-open.
    return (x >= hi && hi > lo) ? std::nextafter(hi, lo) : x;
}

double Rng::normal(double mean, double std) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + std * spare_;
    }
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + std * (r * std::cos(theta));
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) throw DomainError("Rng::below: bound must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

Tensor normal(Rng& rng, double mean, double std, std::size_t rows, std::size_t cols) {
    if (!(std >= 0.0)) throw DomainError("normal: std must be non-negative");
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = rng.normal(mean, std);
    return t;
}

Tensor uniform(Rng& rng, double lo, double hi, std::size_t rows, std::size_t cols) {
    if (lo > hi) throw DomainError("uniform: lo must not exceed hi");
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace proxmmr
