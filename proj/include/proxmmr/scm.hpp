#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "proxmmr/tensor.hpp"

namespace proxmmr::scm {

enum class Experiment { Demand, Sprite };

std::string to_string(Experiment e);
/// "demand" or "sprite"; anything else throws ConfigError.
Experiment parse_experiment(const std::string& name);

/// Estimator-facing columns. The latent confounder is deliberately absent.
struct ObservedView {
    const Tensor& a;
    const Tensor& w;
    const Tensor& z;
    const Tensor& y;

    std::size_t size() const { return y.rows(); }
};

/// Generated sample. `u` is kept for diagnostics only.
struct Dataset {
    Tensor a;
    Tensor w;
    Tensor z;
    Tensor y;
    Tensor u;

    std::size_t size() const { return y.rows(); }
    ObservedView observed() const { return {a, w, z, y}; }
    /// Throws DimensionError if row counts disagree or y/u are not single columns.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Demand

/// Noise variances of the proxy equations. `var_a` and `var_y` are the price
/// and sales noise (fixed at 1 in the benchmark; zeroed only by diagnostics).
struct DemandConfig {
    std::size_t n = 1000;
    double var_z1 = 1.0;
    double var_z2 = 1.0;
    double var_w = 1.0;
    double var_a = 1.0;
    double var_y = 1.0;
    std::uint64_t seed = 0;
    /// Diagnostic hook: pin the latent demand instead of drawing U(0, 10).
    std::optional<double> fixed_u;

    void validate() const;
};

/// g(u) = 2((u-5)^4/600 + exp(-4(u-5)^2) + u/10 - 2)
double demand_g(double u);

/// Per row, draws U, eps1..eps5 in that order, then
///   Z1 = 2 sin(2πU/10) + eps1,  Z2 = 2 cos(2πU/10) + eps2
///   W  = 7 g(U) + 45 + eps3,    A  = 35 + (Z1 + 3) g(U) + Z2 + eps4
///   Y  = A min(exp((W - A)/10), 5) - 5 g(U) + eps5
Dataset demand_sample(const DemandConfig& config);

/// Outcome mechanism, shared by sampling and the interventional oracle.
double demand_outcome(double a, double w, double u, double eps_y);

struct GroundTruth {
    Tensor grid;  ///< m x 1 treatment values (or image indices for sprite)
    Tensor mean;  ///< m x 1 E[Y^a]
    Tensor se;    ///< m x 1 Monte Carlo standard error (zero for exact truths)
};

/// Monte Carlo E[Y^a] under do(A = a): per grid point, `mc` fresh draws of
/// (U, eps3, eps5) using the W and Y noise of `noise`.
GroundTruth demand_ground_truth(const Tensor& grid, std::size_t mc, std::uint64_t seed,
                                const DemandConfig& noise = {});

/// Ten equally spaced treatment values from 10 to 30 inclusive.
Tensor demand_eval_grid();

/// Noise variances swept by the proxy-corruption experiment.
inline const std::vector<double> kZNoiseLevels{0, 0.01, 0.1, 0.5, 1, 2, 4, 8, 16};
inline const std::vector<double> kWNoiseLevels{0, 0.01, 0.1, 0.5, 1, 16, 64, 150};
/// Cross product (var_z, var_w), Z-major: 72 cells.
std::vector<std::pair<double, double>> noise_grid();

/// Noiseless linear system for checking two-stage least squares:
/// U, Z ~ N(0,1); A = Z + U; W = 2U + 0.5; Y = 2A + 3U + 1.
/// The bridge is h(a, w) = 0.25 + 2a + 1.5w.
Dataset linear_sample(std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sprite

/// Fixed ingredients of the image benchmark: the projection matrix B
/// (side² x 10, U[0,1)) and the centring constants for ||vec(A)ᵀB||²/10.
struct SpriteWorld {
    std::size_t side = 32;
    Tensor b;
    double c0 = 0.0;
    double c1 = 1.0;
};

inline constexpr std::size_t kSpriteCalibrationImages = 10000;

/// Draws B from `b_seed` and calibrates c0 (mean) and c1 (standard deviation)
/// over `calibration_images` noisy treatment images.
SpriteWorld make_sprite_world(std::size_t side, std::uint64_t b_seed,
                              std::size_t calibration_images = kSpriteCalibrationImages);

struct SpriteConfig {
    std::size_t n = 1000;
    std::size_t side = 32;
    std::uint64_t seed = 0;
    double pixel_noise_std = 0.1;
    double outcome_noise_std = 0.5;
};

/// Filled ellipse (axes 2:3) rendered with 4x4 supersampling. The centre sits
/// at 0.2 + 0.6·pos in unit image coordinates, so the glyph stays inside the
/// frame; pixel values lie in [0, 1]. Throws DomainError on out-of-range input.
Tensor render_glyph(double scale, double rotation, double pos_x, double pos_y, std::size_t side);

/// Unit-interval span of glyph centres; a posX step of k / (kSpriteSpan·side) moves k columns.
inline constexpr double kSpriteMargin = 0.2;
inline constexpr double kSpriteSpan = 0.6;

/// (||vec(a)ᵀB||²/10 - c0) / c1 for a flattened image row.
double sprite_structural(std::span<const double> image, const SpriteWorld& world);

/// (31U - 15.5)² / 85.25, the confounder multiplier with unit mean over the posY grid.
double sprite_confounder_factor(double pos_y);

/// Z = (scale, rotation, posX), U = posY, A and W noisy renders (side² columns),
/// Y = structural(A) · factor(U) + N(0, outcome_noise_std²).
Dataset sprite_sample(const SpriteConfig& config, const SpriteWorld& world);

/// Noiseless evaluation images over posX, posY ∈ {0, 5, ..., 30}/31,
/// scale ∈ {0.5, 0.8, 1}, rotation ∈ {0, π/2, π, 3π/2}: 588 rows.
struct SpriteTestSet {
    Tensor images;  ///< 588 x side²
    Tensor params;  ///< 588 x 4 (scale, rotation, posX, posY)
};
SpriteTestSet sprite_test_set(std::size_t side);

/// Exact E[Y^a] for each test image.
GroundTruth sprite_ground_truth(const SpriteTestSet& test, const SpriteWorld& world);

}  // namespace proxmmr::scm
