#include <doctest.h>

#include <cmath>
#include <memory>

#include "proxmmr/autodiff.hpp"
#include "proxmmr/error.hpp"
#include "support.hpp"

using namespace proxmmr;
using ad::NodeId;
using ad::Tape;

namespace {

// Entries bounded away from zero so ReLU kinks stay out of the difference stencil.
Tensor away_from_zero(Rng& rng, std::size_t r, std::size_t c) {
    Tensor t = normal(rng, 0, 1, r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += t[i] >= 0 ? 0.2 : -0.2;
    return t;
}

// Contracts a non-scalar node to a scalar with fixed weights so every entry's
// gradient is exercised.
NodeId contract(Tape& tape, NodeId x, std::uint64_t seed = 99) {
    Rng rng(seed);
    const Tensor& v = tape.value(x);
    const NodeId w = tape.constant(normal(rng, 0, 1, v.rows(), v.cols()));
    return ad::sum(tape, ad::multiply(tape, x, w));
}

}  // namespace

TEST_CASE("record appends nodes and validates inputs") {
    Tape tape;
    const NodeId x = tape.constant(Tensor::from_rows({{-1, 2}}));
    const NodeId z = tape.constant(Tensor::zeros(1, 2));
    const auto before = tape.size();
    const NodeId s = ad::add(tape, x, z);
    CHECK(tape.value(s) == tape.value(x));
    const NodeId r = ad::relu(tape, x);
    CHECK(tape.value(r) == Tensor::from_rows({{0, 2}}));
    CHECK(tape.size() == before + 2);
    CHECK_THROWS_AS(tape.record(ad::Op::Add, {x, 999}, Tensor(1, 2)), GraphError);
}

TEST_CASE("backward hand examples") {
    SUBCASE("sum gives ones") {
        Tape tape;
        const NodeId x = tape.parameter(Tensor(3, 2, 0.7));
        const auto g = tape.backward(ad::sum(tape, x));
        CHECK(g[0] == Tensor::ones(3, 2));
    }
    SUBCASE("sum of x*x at 3 gives 6") {
        Tape tape;
        const NodeId x = tape.parameter(Tensor::from_rows({{3}}));
        const auto g = tape.backward(ad::sum(tape, ad::multiply(tape, x, x)));
        CHECK(g[0][0] == 6.0);
    }
    SUBCASE("quadratic form gives (K + Kt) r") {
        Tape tape;
        const Tensor k = Tensor::from_rows({{1, 2}, {0.5, 3}});
        const NodeId r = tape.parameter(Tensor::from_rows({{1}, {-2}}));
        const auto g = tape.backward(ad::quadratic_form(tape, r, std::make_shared<const Tensor>(k)));
        CHECK(g[0] == matmul(add(k, transpose(k)), Tensor::from_rows({{1}, {-2}})));
    }
    SUBCASE("non-scalar root is rejected") {
        Tape tape;
        const NodeId x = tape.parameter(Tensor(2, 1));
        CHECK_THROWS_AS(tape.backward(x), GraphError);
    }
    SUBCASE("relu subgradient at zero is zero") {
        Tape tape;
        const NodeId x = tape.parameter(Tensor::from_rows({{0, 1, -1}}));
        const auto g = tape.backward(ad::sum(tape, ad::relu(tape, x)));
        CHECK(g[0] == Tensor::from_rows({{0, 1, 0}}));
    }
}

TEST_CASE("every op matches central differences") {
    Rng rng(2024);
    const double tol = 1e-6;

    CHECK(testing::gradient_check({normal(rng, 0, 1, 3, 4), normal(rng, 0, 1, 3, 4)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::add(t, p[0], p[1]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 5, 3), normal(rng, 0, 1, 1, 3)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::add_row(t, p[0], p[1]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 3, 4), normal(rng, 0, 1, 3, 4)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::subtract(t, p[0], p[1]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 3, 4), normal(rng, 0, 1, 3, 4)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::multiply(t, p[0], p[1]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 4, 3), normal(rng, 0, 1, 3, 5)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::matmul(t, p[0], p[1]));
                                  }) <= tol);
    CHECK(testing::gradient_check({away_from_zero(rng, 4, 4)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::relu(t, p[0]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 4, 2)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::square(t, p[0]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 4, 2)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return ad::sum(t, ad::square(t, p[0]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 4, 2)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return ad::mean(t, ad::square(t, p[0]));
                                  }) <= tol);
    CHECK(testing::gradient_check({normal(rng, 0, 1, 4, 2)},
                                  [](Tape& t, const std::vector<NodeId>& p) {
                                      return contract(t, ad::scale(t, p[0], -2.5));
                                  }) <= tol);

    const auto k = std::make_shared<const Tensor>(normal(rng, 0, 1, 6, 6));
    for (bool exclude : {false, true}) {
        CHECK(testing::gradient_check({normal(rng, 0, 1, 6, 1)},
                                      [&](Tape& t, const std::vector<NodeId>& p) {
                                          return ad::quadratic_form(t, p[0], k, exclude);
                                      }) <= tol);
    }
    const auto ks = std::make_shared<const Tensor>(add(*k, transpose(*k)));
    CHECK(testing::gradient_check({normal(rng, 0, 1, 6, 1)},
                                  [&](Tape& t, const std::vector<NodeId>& p) {
                                      return ad::quadratic_form(t, p[0], ks, true, true);
                                  }) <= tol);
}

TEST_CASE("backward is linear and repeatable") {
    Rng rng(6);
    const Tensor x0 = normal(rng, 0, 1, 5, 1);
    auto grad_of = [&](double a, double b) {
        Tape t;
        const NodeId x = t.parameter(x0);
        const NodeId f = ad::sum(t, ad::square(t, x));
        const NodeId g = ad::mean(t, ad::multiply(t, x, t.constant(Tensor(5, 1, 3.0))));
        return t.backward(ad::add(t, ad::scale(t, f, a), ad::scale(t, g, b)))[0];
    };
    const Tensor combined = grad_of(2.0, -3.0);
    const Tensor separate = add(scale(grad_of(1.0, 0.0), 2.0), scale(grad_of(0.0, 1.0), -3.0));
    CHECK(testing::relative_error(combined, separate) <= 1e-12);

    Tape t;
    const NodeId x = t.parameter(x0);
    const NodeId root = ad::sum(t, ad::relu(t, x));
    CHECK(t.backward(root) == t.backward(root));
}

TEST_CASE("constants receive no reported gradient") {
    Tape t;
    const NodeId c = t.constant(Tensor(2, 1, 1.0));
    const NodeId p = t.parameter(Tensor(2, 1, 2.0));
    const auto g = t.backward(ad::sum(t, ad::multiply(t, c, p)));
    REQUIRE(g.size() == 1);
    CHECK(g[0] == Tensor(2, 1, 1.0));
}
