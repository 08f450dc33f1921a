#include <doctest.h>

#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "proxmmr/error.hpp"
#include "proxmmr/kernels.hpp"
#include "support.hpp"

using namespace proxmmr;
using kernels::KernelMatrix;
using kernels::Statistic;

namespace {

const KernelMatrix kHalf(Tensor::from_rows({{1, 0.5}, {0.5, 1}}));

scm::Dataset demand(std::size_t n, std::uint64_t seed) {
    scm::DemandConfig c;
    c.n = n;
    c.seed = seed;
    return scm::demand_sample(c);
}

}  // namespace

TEST_CASE("kernel features") {
    const Tensor a = Tensor::from_rows({{3}});
    const Tensor w = Tensor::from_rows({{0}});
    const Tensor z = Tensor::from_rows({{1, 2}});
    const Tensor y = Tensor::from_rows({{0}});
    const scm::ObservedView d{a, w, z, y};
    CHECK(kernels::kernel_features(d, scm::Experiment::Demand, {}) == Tensor::from_rows({{1, 2, 3}}));

    const Tensor img = Tensor::zeros(1, 4);
    const Tensor zs = Tensor::from_rows({{0.5, 0, 0.5}});
    const scm::ObservedView s{img, img, zs, y};
    CHECK(kernels::kernel_features(s, scm::Experiment::Sprite, {}) ==
          Tensor::from_rows({{0.5, 0, 0.5, 0, 0, 0, 0}}));

    // α = 0 removes the treatment from the kernel.
    Tensor img1 = Tensor::ones(2, 4);
    img1(1, 2) = 7;
    const Tensor z2 = Tensor::from_rows({{0.5, 0, 0.5}, {0.5, 0, 0.5}});
    const Tensor y2(2, 1);
    kernels::KernelConfig off;
    off.treatment_scale = 0;
    const auto k = kernels::rbf_matrix(
        kernels::kernel_features({img1, img1, z2, y2}, scm::Experiment::Sprite, off), off);
    CHECK(k(0, 1) == 1.0);
}

TEST_CASE("rbf matrix entries") {
    const Tensor f = Tensor::from_rows({{0, 0, 0}, {0, 0, 1}, {3, 4, 0}});
    const auto k = kernels::rbf_matrix(f, {});
    CHECK(k(0, 0) == 1.0);
    CHECK(k(0, 1) == doctest::Approx(0.6065306597).epsilon(1e-10));
    CHECK(k(1, 0) == k(0, 1));
    CHECK(k(0, 2) == doctest::Approx(std::exp(-12.5)));
    Tensor bad = f;
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(kernels::rbf_matrix(bad, {}), DomainError);
    kernels::KernelConfig cfg;
    cfg.sigma = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("U-statistic examples") {
    CHECK(kernels::u_statistic(Tensor::from_rows({{1}, {2}}), kHalf) == 1.0);
    CHECK(kernels::u_statistic(Tensor::zeros(2, 1), kHalf) == 0.0);
    CHECK(kernels::u_statistic(Tensor::ones(5, 1), KernelMatrix(Tensor::identity(5))) == 0.0);
    CHECK_THROWS_AS(kernels::u_statistic(Tensor::ones(1, 1), KernelMatrix(Tensor::identity(1))), DomainError);
}

TEST_CASE("V-statistic examples") {
    CHECK(kernels::v_statistic(Tensor::from_rows({{1}, {2}}), kHalf) == 1.75);
    CHECK(kernels::v_statistic(Tensor::zeros(2, 1), kHalf) == 0.0);
    CHECK(kernels::v_statistic(Tensor::from_rows({{-3}}), KernelMatrix(Tensor::identity(1))) == 9.0);
}

TEST_CASE("U/V identity holds on random instances") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        const auto k = kernels::rbf_matrix(normal(rng, 0, 1, n, 3), {});
        const Tensor r = normal(rng, 0, 2, n, 1);
        const double nd = static_cast<double>(n);
        const double lhs = nd * nd * kernels::v_statistic(r, k);
        const double mid = nd * (nd - 1) * kernels::u_statistic(r, k);
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) diag += r[i] * r[i] * k(i, i);
        const double scale = std::max({std::abs(lhs), std::abs(mid), diag});
        CHECK(std::abs(lhs - mid - diag) <= 1e-12 * scale);
    }
}

TEST_CASE("RBF matrix is positive semidefinite") {
    Rng rng(5);
    const auto k = kernels::rbf_matrix(normal(rng, 0, 1, 20, 3), {});
    Eigen::MatrixXd m(20, 20);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) m(i, j) = k(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("U-statistic is permutation invariant") {
    Rng rng(6);
    const std::size_t n = 30;
    const Tensor f = normal(rng, 0, 1, n, 3);
    const Tensor r = normal(rng, 0, 1, n, 1);
    const auto perm = permutation(rng, n);
    const double base = kernels::u_statistic(r, kernels::rbf_matrix(f, {}));
    const double permuted = kernels::u_statistic(gather_rows(r, perm), kernels::rbf_matrix(gather_rows(f, perm), {}));
    CHECK(testing::relative_error(base, permuted) <= 1e-12);
    const auto k = kernels::rbf_matrix(f, {});
    const auto sub = k.submatrix(perm);
    CHECK(testing::relative_error(kernels::u_statistic(gather_rows(r, perm), sub), base) <= 1e-12);
}

TEST_CASE("batched risk equals the materialised risk") {
    const auto data = demand(500, 3);
    const auto features = std::make_shared<const Tensor>(
        kernels::kernel_features(data.observed(), scm::Experiment::Demand, {}));
    Tensor r = data.y;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= 0.9 * data.a[i] + 0.3 * data.w[i];
    const auto full = kernels::rbf_matrix(*features, {});

    for (Statistic stat : {Statistic::U, Statistic::V}) {
        ad::Tape ref_tape;
        const auto ref_r = ref_tape.parameter(r);
        const auto ref = kernels::risk_node(ref_tape, ref_r, full, stat);
        const double ref_value = ref_tape.value(ref)[0];
        const Tensor ref_grad = ref_tape.backward(ref)[0];
        CHECK(testing::relative_error(ref_value, kernels::statistic(r, full, stat)) <= 1e-12);

        for (std::size_t block : {1u, 7u, 64u, 500u}) {
            kernels::KernelConfig cfg;
            cfg.block_size = block;
            ad::Tape tape;
            const auto rn = tape.parameter(r);
            const auto node = kernels::batched_risk_node(tape, rn, features, cfg, stat);
            CHECK(testing::relative_error(tape.value(node)[0], ref_value) <= 1e-12);
            CHECK(testing::relative_error(tape.backward(node)[0], ref_grad) <= 1e-12);
        }
    }
}

TEST_CASE("U-statistic is unbiased (reduced size)") {
    // Linear h(a, w) = 0.9a + 0.3w; the full-size check lives in the acceptance suite.
    auto u_of = [](const scm::Dataset& d) {
        Tensor r = d.y;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= 0.9 * d.a[i] + 0.3 * d.w[i];
        const auto f = kernels::kernel_features(d.observed(), scm::Experiment::Demand, {});
        return kernels::u_statistic(r, kernels::rbf_matrix(f, {}));
    };
    const double reference = u_of(demand(4000, 1));
    const std::size_t reps = 1000;
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < reps; ++i) {
        const double u = u_of(demand(20, 1000 + i));
        s += u;
        s2 += u * u;
    }
    const double m = s / reps;
    const double se = std::sqrt((s2 / reps - m * m) / (reps - 1));
    CHECK(std::abs(m - reference) <= 4 * se + 0.05 * std::abs(reference));
}
