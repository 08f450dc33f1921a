#include <doctest.h>

#include <cmath>
#include <limits>

#include "proxmmr/error.hpp"
#include "proxmmr/nn.hpp"
#include "support.hpp"

using namespace proxmmr;
using ad::NodeId;

namespace {

nn::MlpConfig small_config(std::size_t depth = 3, std::size_t width = 8, std::size_t input = 2) {
    nn::MlpConfig c;
    c.input_dim = input;
    c.depth = depth;
    c.width = width;
    c.seed = 17;
    return c;
}

// Rebuilds a model whose parameters are the given tape leaves.
NodeId mse_loss(const nn::BridgeModel& model, ad::Tape& tape, const std::vector<NodeId>& params,
                const Tensor& x, const Tensor& y) {
    nn::BoundModel bound;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        bound.weights.push_back(params[2 * l]);
        bound.biases.push_back(params[2 * l + 1]);
    }
    const NodeId pred = nn::forward(model, bound, tape, tape.constant(x));
    const NodeId r = ad::subtract(tape, tape.constant(y), pred);
    return ad::mean(tape, ad::square(tape, r));
}

}  // namespace

TEST_CASE("init_mlp shapes, bounds and determinism") {
    const auto cfg = small_config(4, 10, 3);
    const auto m = nn::init_mlp(cfg);
    REQUIRE(m.layers.size() == 4);
    CHECK(m.layers[0].weight.rows() == 3);
    CHECK(m.layers[0].weight.cols() == 10);
    CHECK(m.layers[3].weight.cols() == 1);
    for (const auto& layer : m.layers) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.rows()));
        for (double v : layer.weight.data()) CHECK(std::abs(v) <= bound);
        CHECK(layer.bias == Tensor::zeros(1, layer.bias.cols()));
    }
    const auto again = nn::init_mlp(cfg);
    for (std::size_t l = 0; l < m.layers.size(); ++l) CHECK(m.layers[l].weight == again.layers[l].weight);
    CHECK(m.parameter_count() == 3 * 10 + 10 + 2 * (10 * 10 + 10) + 10 + 1);
}

TEST_CASE("config validation") {
    auto c = small_config();
    c.depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.width = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward examples") {
    auto m = nn::init_mlp(small_config());
    Rng rng(1);
    const Tensor x = normal(rng, 0, 1, 6, 2);

    SUBCASE("zero parameters give zero predictions") {
        for (auto* p : m.parameters()) *p = Tensor(p->rows(), p->cols());
        CHECK(nn::predict(m, x) == Tensor::zeros(6, 1));
    }
    SUBCASE("depth 1 is an affine map") {
        auto lin = nn::init_mlp(small_config(1));
        lin.layers[0].bias = Tensor(1, 1, 0.5);
        const Tensor expect = add_row(matmul(x, lin.layers[0].weight), lin.layers[0].bias);
        CHECK(nn::predict(lin, x) == expect);
    }
    SUBCASE("duplicate rows give duplicate outputs") {
        const std::vector<std::size_t> idx{0, 3, 0, 3};
        const Tensor out = nn::predict(m, gather_rows(x, idx));
        CHECK(out[0] == out[2]);
        CHECK(out[1] == out[3]);
    }
    SUBCASE("taped forward equals tape-free forward bitwise") {
        ad::Tape tape;
        const NodeId pred = nn::forward(m, x, tape);
        CHECK(tape.value(pred) == nn::predict(m, x));
    }
    SUBCASE("input width is checked") {
        CHECK_THROWS_AS(nn::predict(m, Tensor(2, 3)), DimensionError);
    }
}

TEST_CASE("MSE gradient of a depth-3 width-8 network matches finite differences") {
    const auto m = nn::init_mlp(small_config());
    Rng rng(12);
    const Tensor x = normal(rng, 0, 1, 16, 2);
    const Tensor y = normal(rng, 0, 1, 16, 1);
    std::vector<Tensor> params;
    for (const auto* p : m.parameters()) params.push_back(*p);
    // Nonzero biases so no unit sits exactly on a ReLU kink.
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) params[2 * l + 1] = normal(rng, 0, 0.1, 1, 8);
    const double err = testing::gradient_check(params, [&](ad::Tape& t, const std::vector<NodeId>& p) {
        return mse_loss(m, t, p, x, y);
    });
    CHECK(err <= 1e-6);
}

TEST_CASE("l2 penalty") {
    auto m = nn::init_mlp(small_config(1, 1, 1));
    m.layers[0].weight = Tensor(1, 1, 3.0);
    m.layers[0].bias = Tensor(1, 1, 100.0);
    CHECK(nn::l2_penalty_value(m) == 9.0);

    ad::Tape tape;
    const auto bound = nn::bind(m, tape);
    const auto g = tape.backward(nn::l2_penalty(bound, tape));
    CHECK(g[0][0] == 6.0);
    CHECK(g[1][0] == 0.0);

    for (auto* p : m.parameters()) *p = Tensor(p->rows(), p->cols());
    CHECK(nn::l2_penalty_value(m) == 0.0);

    Rng rng(3);
    const auto big = nn::init_mlp(small_config());
    std::vector<Tensor> params;
    for (const auto* p : big.parameters()) params.push_back(*p);
    CHECK(testing::gradient_check(params, [&](ad::Tape& t, const std::vector<NodeId>& p) {
              nn::BoundModel b;
              for (std::size_t l = 0; l < big.layers.size(); ++l) {
                  b.weights.push_back(p[2 * l]);
                  b.biases.push_back(p[2 * l + 1]);
              }
              return nn::l2_penalty(b, t);
          }) <= 1e-6);
}

TEST_CASE("adam step") {
    Tensor theta(1, 1, 0.0);
    std::vector<Tensor*> params{&theta};
    std::vector<const Tensor*> cparams{&theta};

    SUBCASE("first step moves by lr") {
        auto opt = nn::make_optimizer(nn::OptimizerKind::Adam, 0.1, cparams);
        nn::adam_step(opt, params, std::vector<Tensor>{Tensor(1, 1, 1.0)});
        CHECK(theta[0] == doctest::Approx(-0.1).epsilon(1e-6));
        CHECK(opt.step == 1);
    }
    SUBCASE("zero gradient leaves parameters but counts the step") {
        auto opt = nn::make_optimizer(nn::OptimizerKind::Adam, 0.1, cparams);
        nn::adam_step(opt, params, std::vector<Tensor>{Tensor(1, 1, 0.0)});
        CHECK(theta[0] == 0.0);
        CHECK(opt.step == 1);
    }
    SUBCASE("lr 0 keeps parameters fixed") {
        auto opt = nn::make_optimizer(nn::OptimizerKind::Adam, 0.0, cparams);
        for (int i = 0; i < 5; ++i) nn::adam_step(opt, params, std::vector<Tensor>{Tensor(1, 1, 2.0)});
        CHECK(theta[0] == 0.0);
    }
    SUBCASE("non-finite gradients abort without touching parameters") {
        auto opt = nn::make_optimizer(nn::OptimizerKind::Adam, 0.1, cparams);
        const std::vector<Tensor> bad{Tensor(1, 1, std::numeric_limits<double>::quiet_NaN())};
        CHECK_THROWS_AS(nn::adam_step(opt, params, bad), TrainingError);
        CHECK(theta[0] == 0.0);
        CHECK(opt.step == 0);
    }
    SUBCASE("identical runs give identical trajectories") {
        auto run = [] {
            Tensor t(2, 1, 1.0);
            std::vector<Tensor*> ps{&t};
            std::vector<const Tensor*> cps{&t};
            auto opt = nn::make_optimizer(nn::OptimizerKind::Adam, 0.05, cps);
            for (int i = 0; i < 20; ++i) nn::adam_step(opt, ps, std::vector<Tensor>{scale(t, 2.0)});
            return t;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("model JSON round trip is exact") {
    const auto m = nn::init_mlp(small_config(3, 5, 4));
    const auto doc = nn::to_json(m);
    CHECK(doc["schema_version"] == nn::kModelSchemaVersion);
    const auto back = nn::model_from_json(nlohmann::json::parse(doc.dump()));
    REQUIRE(back.layers.size() == m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        CHECK(back.layers[l].weight == m.layers[l].weight);
        CHECK(back.layers[l].bias == m.layers[l].bias);
    }
    auto broken = doc;
    broken["layers"][0]["rows"] = 7;
    CHECK_THROWS_AS(nn::model_from_json(broken), ParseError);
}
