#include "proxmmr/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "proxmmr/error.hpp"

namespace proxmmr::kernels {

std::string to_string(Statistic s) {
    return s == Statistic::U ? "U" : "V";
}

void KernelConfig::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("KernelConfig: sigma must be > 0");
    if (block_size == 0) throw ConfigError("KernelConfig: block_size must be >= 1");
}

Tensor kernel_features(const scm::ObservedView& data, scm::Experiment experiment,
                       const KernelConfig& config) {
    if (data.size() == 0) throw DomainError("kernel_features: empty dataset");
    switch (experiment) {
    case scm::Experiment::Demand:
        return hconcat(data.z, data.a);
    case scm::Experiment::Sprite:
        return hconcat(data.z, scale(data.a, config.treatment_scale));
    }
    throw ConfigError("kernel_features: unknown experiment");
}

double rbf(std::span<const double> x, std::span<const double> y, double sigma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double diff = x[k] - y[k];
        d2 += diff * diff;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

KernelMatrix::KernelMatrix(Tensor entries)
    : entries_(std::make_shared<const Tensor>(std::move(entries))) {
    if (entries_->rows() != entries_->cols()) throw DimensionError("KernelMatrix: must be square");
}

KernelMatrix KernelMatrix::submatrix(std::span<const std::size_t> indices) const {
    const Tensor& k = *entries_;
    Tensor out(indices.size(), indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = k.row(indices[i]);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < indices.size(); ++j) dst[j] = src[indices[j]];
    }
    return KernelMatrix(std::move(out));
}

namespace {

void require_finite(const Tensor& features) {
    if (!features.all_finite()) throw DomainError("rbf kernel: non-finite feature value");
}

}  // namespace

KernelMatrix rbf_matrix(const Tensor& features, const KernelConfig& config) {
    config.validate();
    require_finite(features);
    const std::size_t n = features.rows();
    Tensor k(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = rbf(features.row(i), features.row(j), config.sigma);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return KernelMatrix(std::move(k));
}

void rbf_rows(const Tensor& features, const KernelConfig& config, std::size_t first, Tensor& out) {
    const std::size_t n = features.rows();
    if (out.cols() != n || first + out.rows() > n) throw DimensionError("rbf_rows: block shape");
    for (std::size_t b = 0; b < out.rows(); ++b) {
        const std::size_t i = first + b;
        auto row = out.row(b);
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = (i == j) ? 1.0 : rbf(features.row(i), features.row(j), config.sigma);
        }
    }
}

double normaliser(std::size_t n, Statistic which) {
    const double nd = static_cast<double>(n);
    if (which == Statistic::U) {
        if (n < 2) throw DomainError("U-statistic needs n >= 2");
        return 1.0 / (nd * (nd - 1.0));
    }
    if (n < 1) throw DomainError("V-statistic needs n >= 1");
    return 1.0 / (nd * nd);
}

double u_statistic(const Tensor& residuals, const KernelMatrix& k) {
    const double factor = normaliser(residuals.rows(), Statistic::U);
    return ad::quadratic_form_value(residuals, k.entries(), true) * factor;
}

double v_statistic(const Tensor& residuals, const KernelMatrix& k) {
    const double factor = normaliser(residuals.rows(), Statistic::V);
    return ad::quadratic_form_value(residuals, k.entries(), false) * factor;
}

double statistic(const Tensor& residuals, const KernelMatrix& k, Statistic which) {
    return which == Statistic::U ? u_statistic(residuals, k) : v_statistic(residuals, k);
}

ad::NodeId risk_node(ad::Tape& tape, ad::NodeId residuals, const KernelMatrix& k, Statistic which) {
    const double factor = normaliser(tape.value(residuals).rows(), which);
    const ad::NodeId qf =
        ad::quadratic_form(tape, residuals, k.shared(), which == Statistic::U, true);
    return ad::scale(tape, qf, factor);
}

namespace {

// Row-blocked rᵀKr and its gradient 2Kr (K symmetric). The per-row sums run in
// the same order as the materialised quadratic form, so values agree bitwise.
class BatchedQuadraticForm final : public ad::CustomOp {
public:
    BatchedQuadraticForm(std::shared_ptr<const Tensor> features, KernelConfig config,
                         bool exclude_diagonal)
        : features_(std::move(features)), config_(config), exclude_diagonal_(exclude_diagonal) {}

    /// Calls fn(i, (K r)_i) for every row, in order.
    template <class Fn>
    void for_each_row(const Tensor& r, Fn&& fn) const {
        const std::size_t n = features_->rows();
        const std::size_t block = std::min(config_.block_size, n);
        Tensor rows(block, n);
        for (std::size_t first = 0; first < n; first += block) {
            const std::size_t count = std::min(block, n - first);
            if (count != rows.rows()) rows = Tensor(count, n);
            rbf_rows(*features_, config_, first, rows);
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t i = first + b;
                fn(i, ad::kernel_row_product(rows.row(b), r, i, exclude_diagonal_));
            }
        }
    }

    double value(const Tensor& r) const {
        double total = 0.0;
        for_each_row(r, [&](std::size_t i, double kr) { total += r[i] * kr; });
        return total;
    }

    std::vector<Tensor> backward(const Tensor& upstream, std::span<const Tensor* const> parents,
                                 const Tensor&) const override {
        const Tensor& r = *parents[0];
        Tensor g(r.rows(), 1);
        const double up = upstream[0];
        for_each_row(r, [&](std::size_t i, double kr) { g[i] = up * 2.0 * kr; });
        return {std::move(g)};
    }

private:
    std::shared_ptr<const Tensor> features_;
    KernelConfig config_;
    bool exclude_diagonal_;
};

}  // namespace

ad::NodeId batched_risk_node(ad::Tape& tape, ad::NodeId residuals,
                             std::shared_ptr<const Tensor> features, const KernelConfig& config,
                             Statistic which) {
    config.validate();
    const Tensor& r = tape.value(residuals);
    if (r.cols() != 1 || r.rows() != features->rows()) {
        throw DimensionError("batched_risk_node: residuals must be n x 1 matching features");
    }
    require_finite(*features);
    auto op = std::make_shared<const BatchedQuadraticForm>(std::move(features), config,
                                                           which == Statistic::U);
    const double qf = op->value(r);
    const ad::NodeId node = ad::custom(tape, {residuals}, Tensor(1, 1, qf), op);
    return ad::scale(tape, node, normaliser(r.rows(), which));
}

}  // namespace proxmmr::kernels
