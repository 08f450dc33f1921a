#include "proxmmr/scm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "proxmmr/error.hpp"

namespace proxmmr::scm {

namespace {

constexpr std::uint64_t kCalibrationTag = 0x43414C4942ULL;  // "CALIB"

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double checked_std(double variance, const char* name) {
    if (!(variance >= 0.0)) throw DomainError(std::string(name) + " variance must be >= 0");
    return std::sqrt(variance);
}

}  // namespace

std::string to_string(Experiment e) {
    return e == Experiment::Demand ? "demand" : "sprite";
}

Experiment parse_experiment(const std::string& name) {
    if (name == "demand") return Experiment::Demand;
    if (name == "sprite") return Experiment::Sprite;
    throw ConfigError("unknown experiment '" + name + "' (expected demand or sprite)");
}

void Dataset::validate() const {
    const std::size_t n = y.rows();
    if (y.cols() != 1 || u.cols() != 1) throw DimensionError("Dataset: y and u must be columns");
    if (a.rows() != n || w.rows() != n || z.rows() != n || u.rows() != n) {
        throw DimensionError("Dataset: column row counts disagree");
    }
}

void DemandConfig::validate() const {
    if (n == 0) throw DomainError("DemandConfig: n must be >= 1");
    checked_std(var_z1, "var_z1");
    checked_std(var_z2, "var_z2");
    checked_std(var_w, "var_w");
    checked_std(var_a, "var_a");
    checked_std(var_y, "var_y");
}

double demand_g(double u) {
    const double d = u - 5.0;
    return 2.0 * (d * d * d * d / 600.0 + std::exp(-4.0 * d * d) + u / 10.0 - 2.0);
}

double demand_outcome(double a, double w, double u, double eps_y) {
    return a * std::min(std::exp((w - a) / 10.0), 5.0) - 5.0 * demand_g(u) + eps_y;
}

Dataset demand_sample(const DemandConfig& config) {
    config.validate();
    const double sz1 = std::sqrt(config.var_z1), sz2 = std::sqrt(config.var_z2);
    const double sw = std::sqrt(config.var_w), sa = std::sqrt(config.var_a);
    const double sy = std::sqrt(config.var_y);

    Rng rng(config.seed);
    const std::size_t n = config.n;
    Dataset d{Tensor(n, 1), Tensor(n, 1), Tensor(n, 2), Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const double u_draw = rng.uniform(0.0, 10.0);
        const double u = config.fixed_u.value_or(u_draw);
        const double e1 = rng.normal(0.0, sz1);
        const double e2 = rng.normal(0.0, sz2);
        const double e3 = rng.normal(0.0, sw);
        const double e4 = rng.normal(0.0, sa);
        const double e5 = rng.normal(0.0, sy);
        const double g = demand_g(u);
        const double z1 = 2.0 * std::sin(kTwoPi * u / 10.0) + e1;
        const double z2 = 2.0 * std::cos(kTwoPi * u / 10.0) + e2;
        const double w = 7.0 * g + 45.0 + e3;
        const double a = 35.0 + (z1 + 3.0) * g + z2 + e4;
        d.u[i] = u;
        d.z(i, 0) = z1;
        d.z(i, 1) = z2;
        d.w[i] = w;
        d.a[i] = a;
        d.y[i] = demand_outcome(a, w, u, e5);
    }
    return d;
}

GroundTruth demand_ground_truth(const Tensor& grid, std::size_t mc, std::uint64_t seed,
                                const DemandConfig& noise) {
    if (mc == 0) throw DomainError("demand_ground_truth: mc must be >= 1");
    if (grid.cols() != 1) throw DimensionError("demand_ground_truth: grid must be m x 1");
    const double sw = checked_std(noise.var_w, "var_w");
    const double sy = checked_std(noise.var_y, "var_y");
    Rng rng(seed);
    GroundTruth out{grid, Tensor(grid.rows(), 1), Tensor(grid.rows(), 1)};
    for (std::size_t k = 0; k < grid.rows(); ++k) {
        const double a = grid[k];
        // Welford accumulation keeps the variance estimate stable at large mc.
        double m = 0.0, s2 = 0.0;
        for (std::size_t t = 0; t < mc; ++t) {
            const double u_draw = rng.uniform(0.0, 10.0);
            const double u = noise.fixed_u.value_or(u_draw);
            const double w = 7.0 * demand_g(u) + 45.0 + rng.normal(0.0, sw);
            const double y = demand_outcome(a, w, u, rng.normal(0.0, sy));
            const double delta = y - m;
            m += delta / static_cast<double>(t + 1);
            s2 += delta * (y - m);
        }
        out.mean[k] = m;
        out.se[k] = mc > 1 ? std::sqrt(s2 / static_cast<double>(mc - 1) / static_cast<double>(mc))
                           : 0.0;
    }
    return out;
}

Tensor demand_eval_grid() {
    return linspace(10.0, 30.0, 10);
}

std::vector<std::pair<double, double>> noise_grid() {
    std::vector<std::pair<double, double>> cells;
    for (double vz : kZNoiseLevels)
        for (double vw : kWNoiseLevels) cells.emplace_back(vz, vw);
    return cells;
}

Dataset linear_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d{Tensor(n, 1), Tensor(n, 1), Tensor(n, 1), Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.normal(0.0, 1.0);
        const double z = rng.normal(0.0, 1.0);
        d.u[i] = u;
        d.z[i] = z;
        d.a[i] = z + u;
        d.w[i] = 2.0 * u + 0.5;
        d.y[i] = 2.0 * d.a[i] + 3.0 * u + 1.0;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Sprite

namespace {

constexpr std::size_t kSupersample = 4;
constexpr std::size_t kScaleLevels = 6;
constexpr std::size_t kRotationLevels = 40;
constexpr std::size_t kPositionLevels = 32;
constexpr std::size_t kProjectionDim = 10;

// Semi-axes of the glyph at scale 1, in unit image coordinates.
constexpr double kMajorAxis = 0.2;
constexpr double kMinorAxis = kMajorAxis * 2.0 / 3.0;

struct LatentDraw {
    double scale, rotation, pos_x, pos_y;
};

LatentDraw draw_latents(Rng& rng) {
    const auto s = rng.below(kScaleLevels);
    const auto r = rng.below(kRotationLevels);
    const auto x = rng.below(kPositionLevels);
    const auto y = rng.below(kPositionLevels);
    return {0.5 + 0.1 * static_cast<double>(s),
            kTwoPi * static_cast<double>(r) / static_cast<double>(kRotationLevels),
            static_cast<double>(x) / static_cast<double>(kPositionLevels - 1),
            static_cast<double>(y) / static_cast<double>(kPositionLevels - 1)};
}

void add_pixel_noise(std::span<double> px, Rng& rng, double std) {
    for (auto& v : px) v += rng.normal(0.0, std);
}

void copy_into(std::span<double> dst, const Tensor& image) {
    std::copy(image.data().begin(), image.data().end(), dst.begin());
}

}  // namespace

Tensor render_glyph(double scale, double rotation, double pos_x, double pos_y, std::size_t side) {
    if (!(scale >= 0.5 && scale <= 1.0)) throw DomainError("render_glyph: scale must lie in [0.5, 1]");
    if (!(rotation >= 0.0 && rotation < kTwoPi)) {
        throw DomainError("render_glyph: rotation must lie in [0, 2π)");
    }
    if (!(pos_x >= 0.0 && pos_x <= 1.0 && pos_y >= 0.0 && pos_y <= 1.0)) {
        throw DomainError("render_glyph: positions must lie in [0, 1]");
    }
    if (side < 8) throw DomainError("render_glyph: side must be >= 8");

    const double d = static_cast<double>(side);
    // Work in pixel units so integer shifts of the centre are exact.
    const double cx = d * kSpriteMargin + pos_x * (d * kSpriteSpan);
    const double cy = d * kSpriteMargin + pos_y * (d * kSpriteSpan);
    const double major = kMajorAxis * scale * d;
    const double minor = kMinorAxis * scale * d;
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double inv_major2 = 1.0 / (major * major), inv_minor2 = 1.0 / (minor * minor);
    const double weight = 1.0 / static_cast<double>(kSupersample * kSupersample);

    Tensor img(side, side);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t col = 0; col < side; ++col) {
            std::size_t inside = 0;
            for (std::size_t qy = 0; qy < kSupersample; ++qy) {
                const double dy = static_cast<double>(r) + (static_cast<double>(qy) + 0.5) / kSupersample - cy;
                for (std::size_t qx = 0; qx < kSupersample; ++qx) {
                    const double dx =
                        static_cast<double>(col) + (static_cast<double>(qx) + 0.5) / kSupersample - cx;
                    const double along = c * dx + s * dy;
                    const double across = -s * dx + c * dy;
                    if (along * along * inv_major2 + across * across * inv_minor2 <= 1.0) ++inside;
                }
            }
            img(r, col) = static_cast<double>(inside) * weight;
        }
    }
    return img;
}

double sprite_structural(std::span<const double> image, const SpriteWorld& world) {
    if (image.size() != world.b.rows()) {
        throw DimensionError("sprite_structural: image has " + std::to_string(image.size()) +
                             " pixels, B expects " + std::to_string(world.b.rows()));
    }
    const std::size_t k = world.b.cols();
    std::vector<double> proj(k, 0.0);
    for (std::size_t p = 0; p < image.size(); ++p) {
        const double v = image[p];
        if (v == 0.0) continue;
        const auto brow = world.b.row(p);
        for (std::size_t j = 0; j < k; ++j) proj[j] += v * brow[j];
    }
    double norm2 = 0.0;
    for (double v : proj) norm2 += v * v;
    return (norm2 / static_cast<double>(kProjectionDim) - world.c0) / world.c1;
}

double sprite_confounder_factor(double pos_y) {
    const double t = 31.0 * pos_y - 15.5;
    return t * t / 85.25;
}

SpriteWorld make_sprite_world(std::size_t side, std::uint64_t b_seed,
                              std::size_t calibration_images) {
    if (side < 8) throw DomainError("make_sprite_world: side must be >= 8");
    if (calibration_images < 2) throw DomainError("make_sprite_world: need >= 2 calibration images");
    SpriteWorld world;
    world.side = side;
    Rng brng(b_seed);
    world.b = uniform(brng, 0.0, 1.0, side * side, kProjectionDim);

    // Raw statistic first (c0 = 0, c1 = 1), then centre and scale.
    world.c0 = 0.0;
    world.c1 = 1.0;
    Rng rng(splitmix64(b_seed ^ kCalibrationTag));
    Tensor image(1, side * side);
    double m = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < calibration_images; ++t) {
        const LatentDraw l = draw_latents(rng);
        copy_into(image.data(), render_glyph(l.scale, l.rotation, l.pos_x, l.pos_y, side));
        add_pixel_noise(image.data(), rng, 0.1);
        const double v = sprite_structural(image.data(), world);
        const double delta = v - m;
        m += delta / static_cast<double>(t + 1);
        s2 += delta * (v - m);
    }
    world.c0 = m;
    world.c1 = std::sqrt(s2 / static_cast<double>(calibration_images - 1));
    return world;
}

Dataset sprite_sample(const SpriteConfig& config, const SpriteWorld& world) {
    if (config.n == 0) throw DomainError("sprite_sample: n must be >= 1");
    if (config.side != world.side) throw DimensionError("sprite_sample: side differs from world");
    if (!(config.pixel_noise_std >= 0.0) || !(config.outcome_noise_std >= 0.0)) {
        throw DomainError("sprite_sample: noise std must be >= 0");
    }
    const std::size_t n = config.n, px = config.side * config.side;
    Rng rng(config.seed);
    Dataset d{Tensor(n, px), Tensor(n, px), Tensor(n, 3), Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const LatentDraw l = draw_latents(rng);
        d.z(i, 0) = l.scale;
        d.z(i, 1) = l.rotation;
        d.z(i, 2) = l.pos_x;
        d.u[i] = l.pos_y;
        copy_into(d.a.row(i), render_glyph(l.scale, l.rotation, l.pos_x, l.pos_y, config.side));
        add_pixel_noise(d.a.row(i), rng, config.pixel_noise_std);
        copy_into(d.w.row(i), render_glyph(0.8, 0.0, 0.5, l.pos_y, config.side));
        add_pixel_noise(d.w.row(i), rng, config.pixel_noise_std);
        d.y[i] = sprite_structural(d.a.row(i), world) * sprite_confounder_factor(l.pos_y) +
                 rng.normal(0.0, config.outcome_noise_std);
    }
    return d;
}

SpriteTestSet sprite_test_set(std::size_t side) {
    const std::vector<double> positions{0, 5.0 / 31, 10.0 / 31, 15.0 / 31, 20.0 / 31, 25.0 / 31, 30.0 / 31};
    const std::vector<double> scales{0.5, 0.8, 1.0};
    const std::vector<double> rotations{0.0, 0.5 * std::numbers::pi, std::numbers::pi,
                                        1.5 * std::numbers::pi};
    const std::size_t count = positions.size() * positions.size() * scales.size() * rotations.size();
    SpriteTestSet test{Tensor(count, side * side), Tensor(count, 4)};
    std::size_t i = 0;
    for (double px : positions)
        for (double py : positions)
            for (double sc : scales)
                for (double rot : rotations) {
                    copy_into(test.images.row(i), render_glyph(sc, rot, px, py, side));
                    test.params(i, 0) = sc;
                    test.params(i, 1) = rot;
                    test.params(i, 2) = px;
                    test.params(i, 3) = py;
                    ++i;
                }
    return test;
}

GroundTruth sprite_ground_truth(const SpriteTestSet& test, const SpriteWorld& world) {
    const std::size_t m = test.images.rows();
    GroundTruth out{Tensor(m, 1), Tensor(m, 1), Tensor(m, 1)};
    for (std::size_t i = 0; i < m; ++i) {
        out.grid[i] = static_cast<double>(i);
        out.mean[i] = sprite_structural(test.images.row(i), world);
    }
    return out;
}

}  // namespace proxmmr::scm
