#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxmmr/kernels.hpp"
#include "proxmmr/nn.hpp"
#include "proxmmr/scm.hpp"
#include "proxmmr/tensor.hpp"

namespace proxmmr::estimators {

enum class Method { NmmrU, NmmrV, NaiveNet, Ls, LsQf, TwoSls };

/// Command-line tags: nmmr-u, nmmr-v, naive, ls, ls-qf, 2sls.
std::string to_string(Method m);
Method parse_method(const std::string& tag);
std::vector<Method> parse_methods(const std::string& comma_separated);
bool is_neural(Method m);

struct TrainConfig {
    Method method = Method::NmmrV;
    scm::Experiment experiment = scm::Experiment::Demand;
    double lr = 3e-3;
    double lambda = 3e-6;
    std::size_t epochs = 3000;
    std::size_t batch_size = 1000;
    nn::MlpConfig mlp;
    kernels::KernelConfig kernel;
    /// Regenerate kernel blocks on the fly instead of materialising each batch's K.
    bool batched_kernel = false;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Tuned optima for the Demand benchmark; the sprite defaults are sized for
/// flattened d=32 inputs. mlp.input_dim is filled from `input_dim`.
TrainConfig default_train_config(Method method, scm::Experiment experiment, std::size_t input_dim);

/// Optional per-run overrides of the neural hyperparameters.
struct TrainOverrides {
    std::optional<double> lr;
    std::optional<double> lambda;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> width;
    std::optional<std::size_t> depth;

    void apply(TrainConfig& config) const;
};

struct Diagnostics {
    /// Mean batch loss per epoch (before each update), then one final entry:
    /// the loss of the frozen model on the last batch of training.
    std::vector<double> loss_trace;
    double final_loss = 0.0;
    std::vector<std::size_t> final_batch;
    /// First-stage R² per W column (2SLS only).
    std::vector<double> stage1_r2;
    std::size_t skipped_batches = 0;
    std::vector<std::string> warnings;
};

/// h(a, w) = coefficients · φ(a, w), φ = (1, a, w) or (1, a, w, a², w², a·w).
struct LinearBridge {
    bool quadratic = false;
    std::size_t a_dim = 1;
    std::size_t w_dim = 1;
    std::vector<double> coefficients;

    std::size_t feature_count() const;
    void features(std::span<const double> a, std::span<const double> w, std::span<double> out) const;
    double operator()(std::span<const double> a, std::span<const double> w) const;
};

class FittedEstimator {
public:
    FittedEstimator(Method method, nn::BridgeModel model, std::size_t a_dim, Diagnostics diag);
    FittedEstimator(Method method, LinearBridge model, Diagnostics diag);

    Method method() const { return method_; }
    const Diagnostics& diagnostics() const { return diagnostics_; }
    std::size_t a_dim() const { return a_dim_; }
    const nn::BridgeModel* network() const { return std::get_if<nn::BridgeModel>(&model_); }
    const LinearBridge* linear() const { return std::get_if<LinearBridge>(&model_); }

    /// ĥ(a, w) for a single pair of rows.
    double predict(std::span<const double> a, std::span<const double> w) const;

private:
    Method method_;
    std::variant<nn::BridgeModel, LinearBridge> model_;
    std::size_t a_dim_;
    Diagnostics diagnostics_;
};

/// Trains the bridge network by minimising the U- or V-statistic risk plus λ·||weights||².
FittedEstimator fit_nmmr(const scm::ObservedView& data, const TrainConfig& config,
                         kernels::Statistic variant);
/// Same network and optimiser, observational MSE loss.
FittedEstimator fit_naive_net(const scm::ObservedView& data, const TrainConfig& config);
/// OLS on (1, A, W), plus (A², W², AW) when `quadratic`.
FittedEstimator fit_ls(const scm::ObservedView& data, bool quadratic);
/// Stage 1: each W column on (1, A, Z). Stage 2: Y on (1, A, Ŵ).
FittedEstimator fit_2sls(const scm::ObservedView& data);
/// Dispatch on config.method.
FittedEstimator fit(const scm::ObservedView& data, const TrainConfig& config);

/// Ê[Y^a] for each grid row: mean over held-out W rows of ĥ(a, w).
Tensor predict_curve(const FittedEstimator& est, const Tensor& a_grid, const Tensor& heldout_w);

/// Ridge-stabilised normal equations (XᵀX + ridge·I)β = Xᵀy.
std::vector<double> least_squares(const Tensor& design, const Tensor& y, double ridge = 1e-10);

nlohmann::json to_json(const FittedEstimator& est);
FittedEstimator estimator_from_json(const nlohmann::json& doc);

}  // namespace proxmmr::estimators
