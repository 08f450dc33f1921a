#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proxmmr/estimators.hpp"
#include "proxmmr/scm.hpp"
#include "proxmmr/tensor.hpp"

namespace proxmmr::eval {

/// Mean squared gap between two m x 1 curves. Throws DimensionError on a length mismatch.
double c_mse(const Tensor& predicted, const Tensor& truth);

/// Quantile by linear interpolation between order statistics (R's type 7).
/// `sorted` must be ascending and nonempty.
double quantile(std::span<const double> sorted, double p);

enum class Status { Ok, Failed };
std::string to_string(Status s);
Status parse_status(const std::string& text);

struct EvalRecord {
    estimators::Method method = estimators::Method::Ls;
    std::size_t n_train = 0;
    double var_z = 1.0;
    double var_w = 1.0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    Status status = Status::Ok;
    /// Present exactly when status is Ok.
    std::optional<double> c_mse;
    Tensor predicted;
    Tensor truth;
    double wall_s = 0.0;
    std::string error;
};

inline constexpr std::uint64_t kDefaultSpriteWorldSeed = 0x5EEDB;

struct HarnessConfig {
    scm::Experiment experiment = scm::Experiment::Demand;
    std::vector<estimators::Method> methods{estimators::Method::Ls};
    std::size_t n_train = 1000;
    std::size_t replicates = 20;
    std::uint64_t base_seed = 0;
    /// Demand proxy noise; σ²_Z applies to both Z columns.
    double var_z = 1.0;
    double var_w = 1.0;
    std::size_t mc = 10000;
    std::size_t heldout = 1000;
    std::size_t jobs = 1;
    estimators::TrainOverrides overrides;
    std::size_t sprite_side = 32;
    std::uint64_t sprite_world_seed = kDefaultSpriteWorldSeed;

    /// Throws ConfigError; the sprite benchmark only admits the neural methods.
    void validate() const;
};

/// Seed of replicate r: base ⊕ r. Training data is drawn from it directly;
/// held-out W, network initialisation and ground truth use tagged derivations.
std::uint64_t replicate_seed(std::uint64_t base, std::size_t r);
std::uint64_t heldout_seed(std::uint64_t replicate_seed);
std::uint64_t method_seed(std::uint64_t replicate_seed, estimators::Method m);
std::uint64_t truth_seed(std::uint64_t base);

/// One record per (method, replicate), in canonical order. Fit failures become
/// Failed records; the harness keeps going.
std::vector<EvalRecord> run_replicates(const HarnessConfig& config);

/// run_replicates over every (σ²_Z, σ²_W) cell of the noise grid (Demand only).
/// `cells` defaults to the full 72-cell grid.
std::vector<EvalRecord> run_noise_grid(const HarnessConfig& config,
                                       std::optional<std::vector<std::pair<double, double>>> cells = {});

/// Sort key: method, n_train, var_z, var_w, replicate.
void sort_canonical(std::vector<EvalRecord>& records);

struct SummaryRow {
    estimators::Method method = estimators::Method::Ls;
    std::size_t n_train = 0;
    double var_z = 0.0;
    double var_w = 0.0;
    /// Empty when every record of the group failed.
    std::optional<double> median;
    std::optional<double> iqr;
    std::size_t count = 0;
    std::size_t failures = 0;
};

/// Median and type-7 IQR of successful records per (method, n, var_z, var_w),
/// in canonical group order. `count` counts successful records.
std::vector<SummaryRow> summarize(std::span<const EvalRecord> records);

}  // namespace proxmmr::eval
