#include "proxmmr/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "proxmmr/error.hpp"

namespace proxmmr::eval {

using estimators::Method;

double c_mse(const Tensor& predicted, const Tensor& truth) {
    if (predicted.size() != truth.size()) {
        throw DimensionError("c_mse: " + std::to_string(predicted.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " truth values");
    }
    if (truth.empty()) throw DimensionError("c_mse: empty curves");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - predicted[i];
        s += d * d;
    }
    return s / static_cast<double>(truth.size());
}

double quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string to_string(Status s) {
    return s == Status::Ok ? "ok" : "failed";
}

Status parse_status(const std::string& text) {
    if (text == "ok") return Status::Ok;
    if (text == "failed") return Status::Failed;
    throw ParseError("unknown status '" + text + "'");
}

void HarnessConfig::validate() const {
    if (methods.empty()) throw ConfigError("no methods selected");
    if (replicates == 0) throw ConfigError("replicates must be >= 1");
    if (n_train < 2) throw ConfigError("n must be >= 2");
    if (mc == 0) throw ConfigError("mc must be >= 1");
    if (heldout == 0) throw ConfigError("held-out size must be >= 1");
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
    if (!(var_z >= 0.0) || !(var_w >= 0.0)) throw ConfigError("noise variances must be >= 0");
    if (experiment == scm::Experiment::Sprite) {
        for (Method m : methods) {
            if (!estimators::is_neural(m)) {
                throw ConfigError("method " + estimators::to_string(m) +
                                  " is not available for the sprite benchmark");
            }
        }
    }
}

namespace {

constexpr std::uint64_t kHeldoutTag = 0x48454C44ULL;  // "HELD"
constexpr std::uint64_t kMethodTag = 0x4D455448ULL;   // "METH"
constexpr std::uint64_t kTruthTag = 0x54525554ULL;    // "TRUT"

}  // namespace

std::uint64_t replicate_seed(std::uint64_t base, std::size_t r) {
    return base ^ static_cast<std::uint64_t>(r);
}

std::uint64_t heldout_seed(std::uint64_t rs) {
    return splitmix64(rs ^ kHeldoutTag);
}

std::uint64_t method_seed(std::uint64_t rs, Method m) {
    return splitmix64(rs ^ (kMethodTag + (static_cast<std::uint64_t>(m) << 32)));
}

std::uint64_t truth_seed(std::uint64_t base) {
    return splitmix64(base ^ kTruthTag);
}

namespace {

struct Cell {
    double var_z;
    double var_w;
    Tensor truth;
};

// Evaluation inputs shared by every replicate of one experiment.
struct Fixture {
    Tensor grid;
    std::optional<scm::SpriteWorld> world;
};

scm::DemandConfig demand_config(const Cell& cell, std::size_t n, std::uint64_t seed) {
    scm::DemandConfig d;
    d.n = n;
    d.var_z1 = cell.var_z;
    d.var_z2 = cell.var_z;
    d.var_w = cell.var_w;
    d.seed = seed;
    return d;
}

std::vector<EvalRecord> run_replicate(const HarnessConfig& config, const Fixture& fx,
                                      const Cell& cell, std::size_t r) {
    const std::uint64_t rs = replicate_seed(config.base_seed, r);
    scm::Dataset data;
    Tensor heldout_w;
    if (config.experiment == scm::Experiment::Demand) {
        data = scm::demand_sample(demand_config(cell, config.n_train, rs));
        heldout_w = scm::demand_sample(demand_config(cell, config.heldout, heldout_seed(rs))).w;
    } else {
        scm::SpriteConfig sc;
        sc.n = config.n_train;
        sc.side = config.sprite_side;
        sc.seed = rs;
        data = scm::sprite_sample(sc, *fx.world);
        sc.n = config.heldout;
        sc.seed = heldout_seed(rs);
        heldout_w = scm::sprite_sample(sc, *fx.world).w;
    }

    std::vector<EvalRecord> out;
    for (Method m : config.methods) {
        EvalRecord rec;
        rec.method = m;
        rec.n_train = config.n_train;
        rec.var_z = cell.var_z;
        rec.var_w = cell.var_w;
        rec.replicate = r;
        rec.seed = rs;
        rec.truth = cell.truth;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto tc = estimators::default_train_config(m, config.experiment,
                                                       data.a.cols() + data.w.cols());
            config.overrides.apply(tc);
            tc.seed = method_seed(rs, m);
            const auto est = estimators::fit(data.observed(), tc);
            rec.predicted = estimators::predict_curve(est, fx.grid, heldout_w);
            const double score = c_mse(rec.predicted, rec.truth);
            if (!std::isfinite(score)) throw TrainingError("non-finite c-MSE");
            rec.c_mse = score;
        } catch (const std::exception& e) {
            rec.status = Status::Failed;
            rec.c_mse.reset();
            rec.error = e.what();
        }
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<EvalRecord> run_cells(const HarnessConfig& config, std::vector<Cell> cells) {
    config.validate();
    Fixture fx;
    if (config.experiment == scm::Experiment::Demand) {
        fx.grid = scm::demand_eval_grid();
        // One reference curve under the default noise, shared by every cell,
        // so all noise levels are scored against the same ten values.
        const Tensor truth = scm::demand_ground_truth(fx.grid, config.mc, truth_seed(config.base_seed)).mean;
        for (Cell& cell : cells) cell.truth = truth;
    } else {
        fx.world = scm::make_sprite_world(config.sprite_side, config.sprite_world_seed);
        const auto test = scm::sprite_test_set(config.sprite_side);
        const auto truth = scm::sprite_ground_truth(test, *fx.world);
        fx.grid = test.images;
        const double pixel_var = scm::SpriteConfig{}.pixel_noise_std * scm::SpriteConfig{}.pixel_noise_std;
        for (Cell& cell : cells) {
            cell.var_z = 0.0;
            cell.var_w = pixel_var;
            cell.truth = truth.mean;
        }
    }

    const std::size_t tasks = cells.size() * config.replicates;
    std::vector<EvalRecord> records;
    std::mutex collector;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < tasks; t = next++) {
            auto batch = run_replicate(config, fx, cells[t / config.replicates], t % config.replicates);
            std::lock_guard lock(collector);
            for (auto& rec : batch) records.push_back(std::move(rec));
        }
    };
    const std::size_t threads = std::min(config.jobs, tasks);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    sort_canonical(records);
    return records;
}

}  // namespace

std::vector<EvalRecord> run_replicates(const HarnessConfig& config) {
    return run_cells(config, {Cell{config.var_z, config.var_w, {}}});
}

std::vector<EvalRecord> run_noise_grid(const HarnessConfig& config,
                                       std::optional<std::vector<std::pair<double, double>>> cells) {
    if (config.experiment != scm::Experiment::Demand) {
        throw ConfigError("the noise grid applies to the demand benchmark only");
    }
    std::vector<Cell> list;
    for (const auto& [vz, vw] : cells ? *cells : scm::noise_grid()) list.push_back({vz, vw, {}});
    return run_cells(config, std::move(list));
}

void sort_canonical(std::vector<EvalRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
        return std::tie(a.method, a.n_train, a.var_z, a.var_w, a.replicate) <
               std::tie(b.method, b.n_train, b.var_z, b.var_w, b.replicate);
    });
}

std::vector<SummaryRow> summarize(std::span<const EvalRecord> records) {
    using Key = std::tuple<Method, std::size_t, double, double>;
    std::map<Key, std::pair<std::vector<double>, std::size_t>> groups;
    for (const auto& rec : records) {
        auto& [values, failures] = groups[{rec.method, rec.n_train, rec.var_z, rec.var_w}];
        if (rec.status == Status::Ok && rec.c_mse) {
            values.push_back(*rec.c_mse);
        } else {
            ++failures;
        }
    }
    std::vector<SummaryRow> rows;
    for (auto& [key, group] : groups) {
        auto& [values, failures] = group;
        SummaryRow row;
        std::tie(row.method, row.n_train, row.var_z, row.var_w) = key;
        row.count = values.size();
        row.failures = failures;
        if (!values.empty()) {
            std::sort(values.begin(), values.end());
            row.median = quantile(values, 0.5);
            row.iqr = quantile(values, 0.75) - quantile(values, 0.25);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace proxmmr::eval
