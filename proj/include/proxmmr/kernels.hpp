#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>

#include "proxmmr/autodiff.hpp"
#include "proxmmr/scm.hpp"
#include "proxmmr/tensor.hpp"

namespace proxmmr::kernels {

/// Which empirical risk to form from the residual quadratic form.
enum class Statistic { U, V };

std::string to_string(Statistic s);

struct KernelConfig {
    double sigma = 1.0;
    /// Multiplier on image treatments before they enter the kernel.
    double treatment_scale = 0.05;
    std::size_t block_size = 256;

    void validate() const;
};

/// Rows the kernel compares: (z, a) for Demand, (z, α·vec(a)) for sprite.
Tensor kernel_features(const scm::ObservedView& data, scm::Experiment experiment,
                       const KernelConfig& config);

/// exp(-||x - y||² / (2σ²)).
double rbf(std::span<const double> x, std::span<const double> y, double sigma);

/// Materialised symmetric n x n kernel matrix, shared by reference.
class KernelMatrix {
public:
    explicit KernelMatrix(Tensor entries);

    std::size_t n() const { return entries_->rows(); }
    double operator()(std::size_t i, std::size_t j) const { return (*entries_)(i, j); }
    const Tensor& entries() const { return *entries_; }
    std::shared_ptr<const Tensor> shared() const { return entries_; }

    /// Principal submatrix on `indices` (rows and columns in that order).
    KernelMatrix submatrix(std::span<const std::size_t> indices) const;

private:
    std::shared_ptr<const Tensor> entries_;
};

/// K[i][j] = rbf(f_i, f_j). Throws DomainError on non-finite features.
KernelMatrix rbf_matrix(const Tensor& features, const KernelConfig& config);

/// Kernel rows [first, first + out.rows()) against all n feature rows.
void rbf_rows(const Tensor& features, const KernelConfig& config, std::size_t first, Tensor& out);

/// (1 / (n(n-1))) Σ_{i≠j} r_i r_j K_ij. Requires n >= 2.
double u_statistic(const Tensor& residuals, const KernelMatrix& k);
/// (1 / n²) Σ_{i,j} r_i r_j K_ij.
double v_statistic(const Tensor& residuals, const KernelMatrix& k);
double statistic(const Tensor& residuals, const KernelMatrix& k, Statistic which);

/// Normalising factor 1/(n(n-1)) or 1/n².
double normaliser(std::size_t n, Statistic which);

/// Differentiable risk from a materialised kernel (constant w.r.t. the graph).
ad::NodeId risk_node(ad::Tape& tape, ad::NodeId residuals, const KernelMatrix& k, Statistic which);

/// Same value, but the kernel is regenerated in row blocks of config.block_size
/// from `features` in both passes; at most block x n entries are alive at once.
ad::NodeId batched_risk_node(ad::Tape& tape, ad::NodeId residuals,
                             std::shared_ptr<const Tensor> features, const KernelConfig& config,
                             Statistic which);

}  // namespace proxmmr::kernels
