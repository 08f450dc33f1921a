#include "proxmmr/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "proxmmr/error.hpp"
#include "proxmmr/eval.hpp"
#include "proxmmr/io.hpp"

namespace proxmmr::cli {

namespace {

namespace fs = std::filesystem;
using estimators::Method;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("PROXMMR_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("PROXMMR_SEED is not an unsigned integer: ") + env);
    }
    return 0;
}

std::ofstream open_output(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    return f;
}

void finish(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f) throw IoError("error while writing " + path);
}

std::string noise_tag(double vz, double vw) {
    return "var_z=" + io::format_double(vz) + " var_w=" + io::format_double(vw);
}

// ---------------------------------------------------------------------------
// gen / truth

struct GenArgs {
    std::string scm = "demand";
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string out;
    double var_z = 1.0;
    double var_w = 1.0;
    std::size_t side = 32;
};

void cmd_gen(const GenArgs& a, std::ostream& out) {
    const auto experiment = scm::parse_experiment(a.scm);
    if (a.n == 0) throw ConfigError("--n must be >= 1");
    scm::Dataset data;
    std::string meta = "scm=" + a.scm + " n=" + std::to_string(a.n) + " seed=" + std::to_string(a.seed);
    if (experiment == scm::Experiment::Demand) {
        scm::DemandConfig c;
        c.n = a.n;
        c.var_z1 = c.var_z2 = a.var_z;
        c.var_w = a.var_w;
        c.seed = a.seed;
        c.validate();
        data = scm::demand_sample(c);
        meta += " " + noise_tag(a.var_z, a.var_w);
    } else {
        const auto world = scm::make_sprite_world(a.side, eval::kDefaultSpriteWorldSeed);
        scm::SpriteConfig c;
        c.n = a.n;
        c.side = a.side;
        c.seed = a.seed;
        data = scm::sprite_sample(c, world);
        meta += " side=" + std::to_string(a.side) + " world_seed=" + std::to_string(eval::kDefaultSpriteWorldSeed);
    }
    auto f = open_output(a.out);
    io::write_dataset_csv(f, data, experiment, meta);
    finish(f, a.out);
    out << "wrote " << data.size() << " rows to " << a.out << '\n';
}

struct TruthArgs {
    std::string scm = "demand";
    std::size_t mc = 10000;
    std::uint64_t seed = 0;
    std::string out;
    double var_w = 1.0;
    std::size_t side = 32;
};

void cmd_truth(const TruthArgs& a, std::ostream& out) {
    const auto experiment = scm::parse_experiment(a.scm);
    if (a.mc == 0) throw ConfigError("--mc must be >= 1");
    scm::GroundTruth truth;
    std::string meta = "scm=" + a.scm + " seed=" + std::to_string(a.seed);
    if (experiment == scm::Experiment::Demand) {
        scm::DemandConfig noise;
        noise.var_w = a.var_w;
        noise.validate();
        truth = scm::demand_ground_truth(scm::demand_eval_grid(), a.mc, eval::truth_seed(a.seed), noise);
        meta += " mc=" + std::to_string(a.mc) + " var_w=" + io::format_double(a.var_w);
    } else {
        const auto world = scm::make_sprite_world(a.side, eval::kDefaultSpriteWorldSeed);
        truth = scm::sprite_ground_truth(scm::sprite_test_set(a.side), world);
        meta += " side=" + std::to_string(a.side) + " exact";
    }
    auto f = open_output(a.out);
    io::write_truth_csv(f, truth, experiment, meta);
    finish(f, a.out);
    out << "wrote " << truth.mean.size() << " grid points to " << a.out << '\n';
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    std::string experiment = "demand";
    std::string methods = "all";
    std::size_t n = 1000;
    std::size_t replicates = 20;
    std::uint64_t seed = 0;
    bool noise_grid = false;
    std::string out_dir = "results";
    double var_z = 1.0;
    double var_w = 1.0;
    std::size_t mc = 10000;
    std::size_t jobs = 1;
    std::optional<double> lr;
    std::optional<double> lambda;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> width;
    std::optional<std::size_t> depth;
};

template <class T>
T json_get(const nlohmann::json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

// Values from the file fill every field whose flag was not given.
void apply_config_file(const std::string& path, BenchArgs& a, const CLI::App& app) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    const auto given = [&](const char* flag) { return app.get_option(flag)->count() > 0; };
    for (const auto& [key, v] : doc.items()) {
        if (key == "experiment") {
            if (!given("--experiment")) a.experiment = json_get<std::string>(v, key);
        } else if (key == "methods") {
            if (given("--methods")) continue;
            if (v.is_array()) {
                std::string joined;
                for (const auto& m : v) joined += (joined.empty() ? "" : ",") + json_get<std::string>(m, key);
                a.methods = joined;
            } else {
                a.methods = json_get<std::string>(v, key);
            }
        } else if (key == "n") {
            if (!given("--n")) a.n = json_get<std::size_t>(v, key);
        } else if (key == "replicates") {
            if (!given("--replicates")) a.replicates = json_get<std::size_t>(v, key);
        } else if (key == "seed") {
            if (!given("--seed")) a.seed = json_get<std::uint64_t>(v, key);
        } else if (key == "noise_grid") {
            if (!given("--noise-grid")) a.noise_grid = json_get<bool>(v, key);
        } else if (key == "out_dir") {
            if (!given("--out-dir")) a.out_dir = json_get<std::string>(v, key);
        } else if (key == "var_z") {
            if (!given("--var-z")) a.var_z = json_get<double>(v, key);
        } else if (key == "var_w") {
            if (!given("--var-w")) a.var_w = json_get<double>(v, key);
        } else if (key == "mc") {
            if (!given("--mc")) a.mc = json_get<std::size_t>(v, key);
        } else if (key == "jobs") {
            if (!given("--jobs")) a.jobs = json_get<std::size_t>(v, key);
        } else if (key == "lr") {
            if (!given("--lr")) a.lr = json_get<double>(v, key);
        } else if (key == "lambda") {
            if (!given("--lambda")) a.lambda = json_get<double>(v, key);
        } else if (key == "epochs") {
            if (!given("--epochs")) a.epochs = json_get<std::size_t>(v, key);
        } else if (key == "batch") {
            if (!given("--batch")) a.batch = json_get<std::size_t>(v, key);
        } else if (key == "width") {
            if (!given("--width")) a.width = json_get<std::size_t>(v, key);
        } else if (key == "depth") {
            if (!given("--depth")) a.depth = json_get<std::size_t>(v, key);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

std::vector<Method> resolve_methods(const std::string& text, scm::Experiment experiment) {
    if (text == "all") {
        if (experiment == scm::Experiment::Sprite) return {Method::NmmrU, Method::NmmrV, Method::NaiveNet};
        return {Method::NmmrU, Method::NmmrV, Method::NaiveNet, Method::Ls, Method::LsQf, Method::TwoSls};
    }
    return estimators::parse_methods(text);
}

void print_summary(std::ostream& out, std::span<const eval::SummaryRow> rows) {
    out << std::left << std::setw(8) << "method" << std::right << std::setw(8) << "n" << std::setw(8)
        << "var_z" << std::setw(8) << "var_w" << std::setw(12) << "median" << std::setw(12) << "iqr"
        << std::setw(7) << "count" << std::setw(9) << "failures" << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(8) << estimators::to_string(r.method) << std::right << std::setw(8)
            << r.n_train << std::setw(8) << io::format_double(r.var_z) << std::setw(8)
            << io::format_double(r.var_w) << std::fixed << std::setprecision(3) << std::setw(12);
        if (r.median) out << *r.median; else out << "-";
        out << std::setw(12);
        if (r.iqr) out << *r.iqr; else out << "-";
        out << std::defaultfloat << std::setw(7) << r.count << std::setw(9) << r.failures << '\n';
    }
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
    eval::HarnessConfig h;
    h.experiment = scm::parse_experiment(a.experiment);
    h.methods = resolve_methods(a.methods, h.experiment);
    h.n_train = a.n;
    h.replicates = a.replicates;
    h.base_seed = a.seed;
    h.var_z = a.var_z;
    h.var_w = a.var_w;
    h.mc = a.mc;
    h.jobs = a.jobs;
    h.overrides = {a.lr, a.lambda, a.epochs, a.batch, a.width, a.depth};
    h.validate();

    const auto records = a.noise_grid ? eval::run_noise_grid(h) : eval::run_replicates(h);
    const auto summary = eval::summarize(records);

    const std::string records_path = (fs::path(a.out_dir) / "records.csv").string();
    const std::string summary_path = (fs::path(a.out_dir) / "summary.csv").string();
    auto rf = open_output(records_path);
    io::write_records_csv(rf, records);
    finish(rf, records_path);
    auto sf = open_output(summary_path);
    io::write_summary_csv(sf, summary);
    finish(sf, summary_path);

    print_summary(out, summary);
    std::size_t ok = 0;
    for (const auto& r : records) {
        if (r.status == eval::Status::Ok) {
            ++ok;
        } else {
            err << "failed: " << estimators::to_string(r.method) << " replicate " << r.replicate << " ("
                << noise_tag(r.var_z, r.var_w) << "): " << r.error << '\n';
        }
    }
    out << "records: " << records_path << "\nsummary: " << summary_path << '\n';
    return ok > 0 ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string records;
    std::string out;
    std::string svg;
};

void cmd_report(const ReportArgs& a, std::ostream& out) {
    std::ifstream in(a.records, std::ios::binary);
    if (!in) throw IoError("cannot read " + a.records);
    const auto records = io::read_records_csv(in);
    const auto summary = eval::summarize(records);
    if (a.out.empty()) {
        io::write_summary_csv(out, summary);
    } else {
        auto f = open_output(a.out);
        io::write_summary_csv(f, summary);
        finish(f, a.out);
    }
    if (!a.svg.empty()) {
        auto f = open_output(a.svg);
        f << io::boxplot_svg(records);
        finish(f, a.svg);
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural maximum moment restriction benchmarks for proximal causal inference", "proxmmr"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    std::uint64_t seed_default = 0;
    try {
        seed_default = default_seed();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    const auto experiments = CLI::IsMember({"demand", "sprite"});

    GenArgs gen;
    gen.seed = seed_default;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a dataset CSV");
    gen_cmd->add_option("--scm,--experiment", gen.scm, "Structural model")->check(experiments);
    gen_cmd->add_option("--n", gen.n, "Number of samples");
    gen_cmd->add_option("--seed", gen.seed, "Random seed (default from PROXMMR_SEED, else 0)");
    gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();
    gen_cmd->add_option("--var-z", gen.var_z, "Variance of both Z noise terms (demand)");
    gen_cmd->add_option("--var-w", gen.var_w, "Variance of the W noise term (demand)");
    gen_cmd->add_option("--side", gen.side, "Image side length (sprite)");

    TruthArgs truth;
    truth.seed = seed_default;
    auto* truth_cmd = app.add_subcommand("truth", "Write the ground-truth potential-outcome curve");
    truth_cmd->add_option("--scm,--experiment", truth.scm, "Structural model")->check(experiments);
    truth_cmd->add_option("--mc", truth.mc, "Monte Carlo draws per grid point (demand)");
    truth_cmd->add_option("--seed", truth.seed, "Base seed (default from PROXMMR_SEED, else 0)");
    truth_cmd->add_option("--out", truth.out, "Output CSV path")->required();
    truth_cmd->add_option("--var-w", truth.var_w, "Variance of the W noise term (demand)");
    truth_cmd->add_option("--side", truth.side, "Image side length (sprite)");

    BenchArgs bench;
    bench.seed = seed_default;
    bench.jobs = std::max(1u, std::thread::hardware_concurrency());
    std::string config_path;
    auto* bench_cmd = app.add_subcommand("bench", "Run replicated benchmarks and write records and summary CSVs");
    bench_cmd->add_option("--config", config_path, "JSON run configuration; flags take precedence");
    bench_cmd->add_option("--experiment,--scm", bench.experiment, "Benchmark")->check(experiments);
    bench_cmd->add_option("--methods", bench.methods,
                          "Comma list of nmmr-u, nmmr-v, naive, ls, ls-qf, 2sls, or 'all'");
    bench_cmd->add_option("--n", bench.n, "Training sample size");
    bench_cmd->add_option("--replicates", bench.replicates, "Replicates per method and noise cell");
    bench_cmd->add_option("--seed", bench.seed, "Base seed (default from PROXMMR_SEED, else 0)");
    bench_cmd->add_flag("--noise-grid", bench.noise_grid, "Sweep all 72 proxy-noise cells (demand)");
    bench_cmd->add_option("--out-dir", bench.out_dir, "Directory for records.csv and summary.csv");
    bench_cmd->add_option("--var-z", bench.var_z, "Variance of both Z noise terms (demand)");
    bench_cmd->add_option("--var-w", bench.var_w, "Variance of the W noise term (demand)");
    bench_cmd->add_option("--mc", bench.mc, "Monte Carlo draws for the demand ground truth");
    bench_cmd->add_option("--jobs", bench.jobs, "Worker threads");
    bench_cmd->add_option("--lr", bench.lr, "Override the learning rate (default: tuned per method)");
    bench_cmd->add_option("--lambda", bench.lambda, "Override the L2 coefficient");
    bench_cmd->add_option("--epochs", bench.epochs, "Override the number of epochs");
    bench_cmd->add_option("--batch", bench.batch, "Override the batch size");
    bench_cmd->add_option("--width", bench.width, "Override the hidden width");
    bench_cmd->add_option("--depth", bench.depth, "Override the number of affine layers");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "Summarise a records CSV, optionally as an SVG boxplot");
    report_cmd->add_option("records", report.records, "Records CSV written by bench")->required();
    report_cmd->add_option("--out", report.out, "Summary CSV path (default: standard output)");
    report_cmd->add_option("--svg", report.svg, "Boxplot SVG path");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) {
            cmd_gen(gen, out);
        } else if (*truth_cmd) {
            cmd_truth(truth, out);
        } else if (*bench_cmd) {
            if (!config_path.empty()) apply_config_file(config_path, bench, *bench_cmd);
            return cmd_bench(bench, out, err);
        } else if (*report_cmd) {
            cmd_report(report, out);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace proxmmr::cli
