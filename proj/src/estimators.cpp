#include "proxmmr/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <malloc.h>

#include "proxmmr/autodiff.hpp"
#include "proxmmr/error.hpp"

namespace proxmmr::estimators {

namespace {

constexpr std::uint64_t kShuffleTag = 0x53485546ULL;  // "SHUF"
constexpr std::uint64_t kInitTag = 0x494E4954ULL;     // "INIT"
constexpr double kRidge = 1e-10;
// Largest training set whose full kernel matrix is cached (entries).
constexpr std::size_t kKernelCacheEntries = 5000 * 5000;

}  // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::NmmrU: return "nmmr-u";
    case Method::NmmrV: return "nmmr-v";
    case Method::NaiveNet: return "naive";
    case Method::Ls: return "ls";
    case Method::LsQf: return "ls-qf";
    case Method::TwoSls: return "2sls";
    }
    return "?";
}

Method parse_method(const std::string& tag) {
    for (Method m : {Method::NmmrU, Method::NmmrV, Method::NaiveNet, Method::Ls, Method::LsQf,
                     Method::TwoSls}) {
        if (tag == to_string(m)) return m;
    }
    throw ConfigError("unknown method '" + tag + "' (expected nmmr-u, nmmr-v, naive, ls, ls-qf, 2sls)");
}

std::vector<Method> parse_methods(const std::string& comma_separated) {
    std::vector<Method> out;
    std::stringstream ss(comma_separated);
    std::string tag;
    while (std::getline(ss, tag, ',')) {
        if (!tag.empty()) out.push_back(parse_method(tag));
    }
    if (out.empty()) throw ConfigError("no methods given");
    return out;
}

bool is_neural(Method m) {
    return m == Method::NmmrU || m == Method::NmmrV || m == Method::NaiveNet;
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("TrainConfig: lambda must be >= 0");
    if (!(lr >= 0.0)) throw ConfigError("TrainConfig: lr must be >= 0");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch size must be >= 1");
    if (method == Method::NmmrU && batch_size < 2) {
        throw ConfigError("TrainConfig: U-statistic training needs batch size >= 2");
    }
    mlp.validate();
    kernel.validate();
}

TrainConfig default_train_config(Method method, scm::Experiment experiment, std::size_t input_dim) {
    TrainConfig c;
    c.method = method;
    c.experiment = experiment;
    c.mlp.input_dim = input_dim;
    if (experiment == scm::Experiment::Demand) {
        c.lr = 3e-3;
        c.lambda = 3e-6;
        c.epochs = 3000;
        c.batch_size = 1000;
        c.mlp.width = 80;
        c.mlp.depth = method == Method::NmmrU ? 4 : method == Method::NmmrV ? 3 : 2;
    } else {
        c.lr = 3e-4;
        c.lambda = method == Method::NmmrV ? 3e-7 : 3e-6;
        c.epochs = 100;
        c.batch_size = 256;
        c.mlp.width = 64;
        c.mlp.depth = 3;
    }
    return c;
}

void TrainOverrides::apply(TrainConfig& config) const {
    if (lr) config.lr = *lr;
    if (lambda) config.lambda = *lambda;
    if (epochs) config.epochs = *epochs;
    if (batch_size) config.batch_size = *batch_size;
    if (width) config.mlp.width = *width;
    if (depth) config.mlp.depth = *depth;
}

// ---------------------------------------------------------------------------
// Linear bridges

std::size_t LinearBridge::feature_count() const {
    return quadratic ? 6 : 1 + a_dim + w_dim;
}

void LinearBridge::features(std::span<const double> a, std::span<const double> w,
                            std::span<double> out) const {
    out[0] = 1.0;
    if (quadratic) {
        out[1] = a[0];
        out[2] = w[0];
        out[3] = a[0] * a[0];
        out[4] = w[0] * w[0];
        out[5] = a[0] * w[0];
        return;
    }
    std::copy(a.begin(), a.end(), out.begin() + 1);
    std::copy(w.begin(), w.end(), out.begin() + 1 + static_cast<std::ptrdiff_t>(a.size()));
}

double LinearBridge::operator()(std::span<const double> a, std::span<const double> w) const {
    std::vector<double> phi(feature_count());
    features(a, w, phi);
    double s = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) s += coefficients[k] * phi[k];
    return s;
}

std::vector<double> least_squares(const Tensor& design, const Tensor& y, double ridge) {
    if (design.rows() != y.rows() || y.cols() != 1) throw DimensionError("least_squares: shapes");
    const Eigen::Index n = static_cast<Eigen::Index>(design.rows());
    const Eigen::Index p = static_cast<Eigen::Index>(design.cols());
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        design.data().data(), n, p);
    Eigen::Map<const Eigen::VectorXd> yy(y.data().data(), n);
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge;
    const Eigen::VectorXd beta = gram.ldlt().solve(x.transpose() * yy);
    return {beta.data(), beta.data() + beta.size()};
}

namespace {

Tensor linear_design(const LinearBridge& shape, const Tensor& a, const Tensor& w) {
    Tensor x(a.rows(), shape.feature_count());
    for (std::size_t i = 0; i < a.rows(); ++i) shape.features(a.row(i), w.row(i), x.row(i));
    return x;
}

void require_scalar_columns(const scm::ObservedView& data, const char* who) {
    if (data.a.cols() != 1 || data.w.cols() != 1) {
        throw ConfigError(std::string(who) + " needs scalar treatment and proxy columns");
    }
}

}  // namespace

FittedEstimator fit_ls(const scm::ObservedView& data, bool quadratic) {
    if (quadratic) require_scalar_columns(data, "LS-QF");
    if (data.size() == 0) throw DomainError("fit_ls: empty dataset");
    LinearBridge bridge{quadratic, data.a.cols(), data.w.cols(), {}};
    bridge.coefficients = least_squares(linear_design(bridge, data.a, data.w), data.y, kRidge);
    Diagnostics diag;
    return {quadratic ? Method::LsQf : Method::Ls, std::move(bridge), std::move(diag)};
}

FittedEstimator fit_2sls(const scm::ObservedView& data) {
    const std::size_t n = data.size();
    const std::size_t stage1_cols = 1 + data.a.cols() + data.z.cols();
    if (n <= stage1_cols) throw DomainError("fit_2sls: need more samples than regressors");

    Tensor stage1(n, stage1_cols);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = stage1.row(i);
        row[0] = 1.0;
        std::copy(data.a.row(i).begin(), data.a.row(i).end(), row.begin() + 1);
        std::copy(data.z.row(i).begin(), data.z.row(i).end(),
                  row.begin() + 1 + static_cast<std::ptrdiff_t>(data.a.cols()));
    }

    Diagnostics diag;
    Tensor w_hat(n, data.w.cols());
    for (std::size_t c = 0; c < data.w.cols(); ++c) {
        Tensor target(n, 1);
        for (std::size_t i = 0; i < n; ++i) target[i] = data.w(i, c);
        const auto beta = least_squares(stage1, target, kRidge);
        double mean_w = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean_w += target[i];
        mean_w /= static_cast<double>(n);
        double ss_res = 0.0, ss_tot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double fit = 0.0;
            for (std::size_t k = 0; k < beta.size(); ++k) fit += beta[k] * stage1(i, k);
            w_hat(i, c) = fit;
            ss_res += (target[i] - fit) * (target[i] - fit);
            ss_tot += (target[i] - mean_w) * (target[i] - mean_w);
        }
        const double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
        diag.stage1_r2.push_back(std::clamp(r2, 0.0, 1.0));
    }

    LinearBridge bridge{false, data.a.cols(), data.w.cols(), {}};
    bridge.coefficients = least_squares(linear_design(bridge, data.a, w_hat), data.y, kRidge);
    return {Method::TwoSls, std::move(bridge), std::move(diag)};
}

// ---------------------------------------------------------------------------
// Neural bridges

namespace {

enum class LossKind { Kernel, Mse };

// Supplies each batch's kernel for the kernel losses.
class BatchKernels {
public:
    BatchKernels(const scm::ObservedView& data, const TrainConfig& config)
        : config_(config) {
        features_ = kernel_features(data, config.experiment, config.kernel);
        const std::size_t n = data.size();
        if (!config.batched_kernel && n * n <= kKernelCacheEntries) {
            full_.emplace(kernels::rbf_matrix(features_, config.kernel));
        }
    }

    ad::NodeId risk(ad::Tape& tape, ad::NodeId r, std::span<const std::size_t> idx,
                    bool whole, kernels::Statistic stat) const {
        if (config_.batched_kernel) {
            auto f = std::make_shared<const Tensor>(whole ? features_ : gather_rows(features_, idx));
            return kernels::batched_risk_node(tape, r, std::move(f), config_.kernel, stat);
        }
        if (full_) {
            return kernels::risk_node(tape, r, whole ? *full_ : full_->submatrix(idx), stat);
        }
        return kernels::risk_node(tape, r, kernels::rbf_matrix(gather_rows(features_, idx), config_.kernel),
                                  stat);
    }

    double value(const Tensor& r, std::span<const std::size_t> idx, bool whole,
                 kernels::Statistic stat) const {
        if (full_) return kernels::statistic(r, whole ? *full_ : full_->submatrix(idx), stat);
        const Tensor f = whole ? features_ : gather_rows(features_, idx);
        return kernels::statistic(r, kernels::rbf_matrix(f, config_.kernel), stat);
    }

private:
    const TrainConfig& config_;
    Tensor features_;
    std::optional<kernels::KernelMatrix> full_;
};

std::string trace_tail(const std::vector<double>& trace) {
    std::ostringstream os;
    os << "loss trace tail:";
    const std::size_t start = trace.size() > 5 ? trace.size() - 5 : 0;
    for (std::size_t i = start; i < trace.size(); ++i) os << ' ' << trace[i];
    return os.str();
}

// Every step allocates and frees activation-sized buffers. glibc's default
// thresholds hand those back to the kernel each time, so each step pays for
// fresh page faults; keeping them on the heap is roughly 3x faster.
void keep_buffers_on_heap() {
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 256 << 20);
    });
}

FittedEstimator train_network(const scm::ObservedView& data, const TrainConfig& config_in,
                              LossKind loss_kind, kernels::Statistic stat) {
    keep_buffers_on_heap();
    TrainConfig config = config_in;
    config.mlp.input_dim = data.a.cols() + data.w.cols();
    config.validate();
    const std::size_t n = data.size();
    if (n < 2 && loss_kind == LossKind::Kernel) throw DomainError("fit_nmmr: need n >= 2");
    if (n < 1) throw DomainError("fit: empty dataset");

    const Tensor inputs = hconcat(data.a, data.w);
    std::optional<BatchKernels> kernels_;
    if (loss_kind == LossKind::Kernel) kernels_.emplace(data, config);

    config.mlp.seed = splitmix64(config.seed ^ kInitTag);
    nn::BridgeModel model = nn::init_mlp(config.mlp);
    auto params = model.parameters();
    std::vector<const Tensor*> cparams(params.begin(), params.end());
    nn::OptimizerState opt = nn::make_optimizer(nn::OptimizerKind::Adam, config.lr, cparams);
    Rng shuffle_rng(splitmix64(config.seed ^ kShuffleTag));

    const std::size_t batch = std::min(config.batch_size, n);
    const bool whole = batch >= n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    Diagnostics diag;
    std::vector<std::size_t> last_batch;

    auto batch_loss = [&](ad::Tape& tape, const nn::BoundModel& bound,
                          std::span<const std::size_t> idx) {
        const ad::NodeId x = tape.constant(whole ? inputs : gather_rows(inputs, idx));
        const ad::NodeId y = tape.constant(whole ? data.y : gather_rows(data.y, idx));
        const ad::NodeId pred = nn::forward(model, bound, tape, x);
        const ad::NodeId r = ad::subtract(tape, y, pred);
        const ad::NodeId fit_term = loss_kind == LossKind::Kernel
                                        ? kernels_->risk(tape, r, idx, whole, stat)
                                        : ad::mean(tape, ad::square(tape, r));
        const ad::NodeId penalty = ad::scale(tape, nn::l2_penalty(bound, tape), config.lambda);
        return ad::add(tape, fit_term, penalty);
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (!whole) order = permutation(shuffle_rng, n);
        double epoch_loss = 0.0;
        std::size_t counted = 0;
        for (std::size_t first = 0; first < n; first += batch) {
            const std::size_t count = std::min(batch, n - first);
            std::span<const std::size_t> idx(order.data() + first, count);
            if (count < 2 && loss_kind == LossKind::Kernel && stat == kernels::Statistic::U) {
                ++diag.skipped_batches;
                if (diag.warnings.empty()) diag.warnings.push_back("skipped size-1 batch under U-statistic");
                continue;
            }
            ad::Tape tape;
            const nn::BoundModel bound = nn::bind(model, tape);
            const ad::NodeId loss = batch_loss(tape, bound, idx);
            const double value = tape.value(loss)[0];
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + "; " +
                                    trace_tail(diag.loss_trace));
            }
            const auto grads = tape.backward(loss);
            nn::adam_step(opt, params, grads);
            epoch_loss += value;
            ++counted;
            last_batch.assign(idx.begin(), idx.end());
        }
        if (counted > 0) diag.loss_trace.push_back(epoch_loss / static_cast<double>(counted));
    }

    // Frozen-model loss on the final batch closes the trace.
    if (!last_batch.empty()) {
        ad::Tape tape;
        const nn::BoundModel bound = nn::bind(model, tape);
        const ad::NodeId loss = batch_loss(tape, bound, last_batch);
        diag.final_loss = tape.value(loss)[0];
        diag.loss_trace.push_back(diag.final_loss);
        diag.final_batch = std::move(last_batch);
    }
    return {config.method, std::move(model), data.a.cols(), std::move(diag)};
}

}  // namespace

FittedEstimator fit_nmmr(const scm::ObservedView& data, const TrainConfig& config,
                         kernels::Statistic variant) {
    TrainConfig c = config;
    c.method = variant == kernels::Statistic::U ? Method::NmmrU : Method::NmmrV;
    return train_network(data, c, LossKind::Kernel, variant);
}

FittedEstimator fit_naive_net(const scm::ObservedView& data, const TrainConfig& config) {
    TrainConfig c = config;
    c.method = Method::NaiveNet;
    return train_network(data, c, LossKind::Mse, kernels::Statistic::V);
}

FittedEstimator fit(const scm::ObservedView& data, const TrainConfig& config) {
    switch (config.method) {
    case Method::NmmrU: return fit_nmmr(data, config, kernels::Statistic::U);
    case Method::NmmrV: return fit_nmmr(data, config, kernels::Statistic::V);
    case Method::NaiveNet: return fit_naive_net(data, config);
    case Method::Ls: return fit_ls(data, false);
    case Method::LsQf: return fit_ls(data, true);
    case Method::TwoSls: return fit_2sls(data);
    }
    throw ConfigError("fit: unknown method");
}

// ---------------------------------------------------------------------------
// Prediction

FittedEstimator::FittedEstimator(Method method, nn::BridgeModel model, std::size_t a_dim,
                                 Diagnostics diag)
    : method_(method), model_(std::move(model)), a_dim_(a_dim), diagnostics_(std::move(diag)) {}

FittedEstimator::FittedEstimator(Method method, LinearBridge model, Diagnostics diag)
    : method_(method), a_dim_(model.a_dim), diagnostics_(std::move(diag)) {
    model_ = std::move(model);
}

double FittedEstimator::predict(std::span<const double> a, std::span<const double> w) const {
    if (const auto* lin = linear()) return (*lin)(a, w);
    const auto& net = std::get<nn::BridgeModel>(model_);
    Tensor x(1, a.size() + w.size());
    std::copy(a.begin(), a.end(), x.data().begin());
    std::copy(w.begin(), w.end(), x.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return nn::predict(net, x)[0];
}

namespace {

// The first affine layer splits as a·W_a + w·W_w + b, so the held-out half is
// computed once and reused for every grid row.
Tensor network_curve(const nn::BridgeModel& net, std::size_t a_dim, const Tensor& grid,
                     const Tensor& heldout) {
    const Tensor& w0 = net.layers.front().weight;
    const std::size_t h0 = w0.cols();
    Tensor wa(a_dim, h0), ww(w0.rows() - a_dim, h0);
    for (std::size_t k = 0; k < w0.rows(); ++k) {
        auto dst = k < a_dim ? wa.row(k) : ww.row(k - a_dim);
        std::copy(w0.row(k).begin(), w0.row(k).end(), dst.begin());
    }
    const Tensor a_part = matmul(grid, wa);
    const Tensor w_part = add_row(matmul(heldout, ww), net.layers.front().bias);

    Tensor curve(grid.rows(), 1);
    for (std::size_t g = 0; g < grid.rows(); ++g) {
        Tensor h = add_row(w_part, Tensor(1, h0, std::vector<double>(a_part.row(g).begin(),
                                                                     a_part.row(g).end())));
        for (std::size_t l = 1; l < net.layers.size(); ++l) {
            h = relu(h);
            h = add_row(matmul(h, net.layers[l].weight), net.layers[l].bias);
        }
        curve[g] = mean(h);
    }
    return curve;
}

}  // namespace

Tensor predict_curve(const FittedEstimator& est, const Tensor& a_grid, const Tensor& heldout_w) {
    if (heldout_w.rows() == 0) throw DomainError("predict_curve: need at least one held-out W row");
    if (a_grid.cols() != est.a_dim()) throw DimensionError("predict_curve: grid width");
    if (const auto* net = est.network()) {
        if (a_grid.cols() + heldout_w.cols() != net->config.input_dim) {
            throw DimensionError("predict_curve: held-out W width");
        }
        return network_curve(*net, est.a_dim(), a_grid, heldout_w);
    }
    const LinearBridge& lin = *est.linear();
    if (heldout_w.cols() != lin.w_dim) throw DimensionError("predict_curve: held-out W width");
    Tensor curve(a_grid.rows(), 1);
    for (std::size_t g = 0; g < a_grid.rows(); ++g) {
        double s = 0.0;
        for (std::size_t j = 0; j < heldout_w.rows(); ++j) s += lin(a_grid.row(g), heldout_w.row(j));
        curve[g] = s / static_cast<double>(heldout_w.rows());
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Persistence

nlohmann::json to_json(const FittedEstimator& est) {
    nlohmann::json doc{{"schema_version", nn::kModelSchemaVersion},
                       {"method", to_string(est.method())},
                       {"a_dim", est.a_dim()}};
    if (const auto* net = est.network()) {
        doc["kind"] = "mlp";
        doc["model"] = nn::to_json(*net);
    } else {
        const auto& lin = *est.linear();
        doc["kind"] = "linear";
        doc["model"] = {{"features", lin.quadratic ? "quadratic" : "linear"},
                        {"w_dim", lin.w_dim},
                        {"coefficients", lin.coefficients}};
    }
    return doc;
}

FittedEstimator estimator_from_json(const nlohmann::json& doc) {
    try {
        const Method method = parse_method(doc.at("method").get<std::string>());
        const auto a_dim = doc.at("a_dim").get<std::size_t>();
        const auto kind = doc.at("kind").get<std::string>();
        if (kind == "mlp") {
            return {method, nn::model_from_json(doc.at("model")), a_dim, Diagnostics{}};
        }
        if (kind == "linear") {
            const auto& m = doc.at("model");
            LinearBridge lin{m.at("features").get<std::string>() == "quadratic", a_dim,
                             m.at("w_dim").get<std::size_t>(),
                             m.at("coefficients").get<std::vector<double>>()};
            if (lin.coefficients.size() != lin.feature_count()) {
                throw ParseError("estimator: coefficient count mismatch");
            }
            return {method, std::move(lin), Diagnostics{}};
        }
        throw ParseError("estimator: unknown kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("estimator: ") + e.what());
    }
}

}  // namespace proxmmr::estimators
