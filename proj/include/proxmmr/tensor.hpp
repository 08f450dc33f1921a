#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace proxmmr {

/// Dense row-major matrix of doubles. Vectors are n x 1 (column) or 1 x n (row).
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Build from nested rows; all rows must have equal length.
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor column(std::span<const double> values);
    static Tensor zeros(std::size_t rows, std::size_t cols) { return {rows, cols, 0.0}; }
    static Tensor ones(std::size_t rows, std::size_t cols) { return {rows, cols, 1.0}; }
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }
    std::span<double> row(std::size_t r) {
        return std::span<double>(data_).subspan(r * cols_, cols_);
    }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Shape-checked arithmetic. All functions throw DimensionError on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ·b without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor add(const Tensor& a, const Tensor& b);
/// a + b where b is a 1 x cols row broadcast over every row of a.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
double sum(const Tensor& a);
/// Inner product with a fixed evaluation order: eight interleaved partial sums
/// (lane j mod 8), combined pairwise, then the remainder added in sequence.
double dot(std::span<const double> x, std::span<const double> y);
double mean(const Tensor& a);
double squared_norm(const Tensor& a);
/// Column-wise sum, 1 x cols.
Tensor column_sums(const Tensor& a);

/// Horizontal concatenation; row counts must agree.
Tensor hconcat(const Tensor& a, const Tensor& b);
/// Rows of `m` selected by `indices`, in order.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);
/// Evenly spaced values from `lo` to `hi` inclusive as an n x 1 column.
Tensor linspace(double lo, double hi, std::size_t n);

/// xoshiro256** (Blackman & Vigna, 2018) seeded through splitmix64.
///
/// Stream definition, for ports to other languages:
///   - state s[0..3] = four successive splitmix64 outputs starting from `seed`
///   - next_u64()    = rotl(s1 * 5, 7) * 9, followed by the reference state update
///   - uniform01()   = (next_u64() >> 11) * 2^-53, in [0, 1)
///   - normal()      = Box–Muller on u1 = 1 - uniform01(), u2 = uniform01():
///                     r = sqrt(-2 ln u1); yields r cos(2πu2) then r sin(2πu2)
///                     (the sine half is cached for the following call)
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform01();
    double uniform(double lo, double hi);
    double normal(double mean, double std);
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// One splitmix64 step; used for seed derivation.
std::uint64_t splitmix64(std::uint64_t x);

/// Tensor of i.i.d. N(mean, std²) draws, filled row-major. Throws DomainError if std < 0.
Tensor normal(Rng& rng, double mean, double std, std::size_t rows, std::size_t cols);
/// Tensor of i.i.d. U[lo, hi) draws. Throws DomainError if lo > hi.
Tensor uniform(Rng& rng, double lo, double hi, std::size_t rows, std::size_t cols);
/// Fisher–Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace proxmmr
