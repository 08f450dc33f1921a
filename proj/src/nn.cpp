#include "proxmmr/nn.hpp"

#include <cmath>

#include "proxmmr/error.hpp"

namespace proxmmr::nn {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::Relu:
        return "relu";
    }
    return "relu";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + name + "'");
}

void MlpConfig::validate() const {
    if (input_dim == 0) throw ConfigError("MlpConfig: input_dim must be >= 1");
    if (depth == 0) throw ConfigError("MlpConfig: depth must be >= 1");
    if (width == 0) throw ConfigError("MlpConfig: width must be >= 1");
}

std::size_t BridgeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

std::vector<Tensor*> BridgeModel::parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Tensor*> BridgeModel::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

BridgeModel init_mlp(const MlpConfig& config, Rng& rng) {
    config.validate();
    BridgeModel model{config, {}};
    std::size_t fan_in = config.input_dim;
    for (std::size_t l = 0; l < config.depth; ++l) {
        const std::size_t fan_out = (l + 1 == config.depth) ? 1 : config.width;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        model.layers.push_back({uniform(rng, -bound, bound, fan_in, fan_out), Tensor(1, fan_out)});
        fan_in = fan_out;
    }
    return model;
}

BridgeModel init_mlp(const MlpConfig& config) {
    Rng rng(config.seed);
    return init_mlp(config, rng);
}

BoundModel bind(const BridgeModel& model, ad::Tape& tape) {
    BoundModel bound;
    for (const auto& l : model.layers) {
        bound.weights.push_back(tape.parameter(l.weight));
        bound.biases.push_back(tape.parameter(l.bias));
    }
    return bound;
}

ad::NodeId forward(const BridgeModel& model, const BoundModel& bound, ad::Tape& tape,
                   ad::NodeId inputs) {
    if (tape.value(inputs).cols() != model.config.input_dim) {
        throw DimensionError("forward: input has " + std::to_string(tape.value(inputs).cols()) +
                             " columns, model expects " + std::to_string(model.config.input_dim));
    }
    ad::NodeId h = inputs;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        h = ad::add_row(tape, ad::matmul(tape, h, bound.weights[l]), bound.biases[l]);
        if (l + 1 < model.layers.size()) h = ad::relu(tape, h);
    }
    return h;
}

ad::NodeId forward(const BridgeModel& model, const Tensor& inputs, ad::Tape& tape) {
    const BoundModel bound = bind(model, tape);
    return forward(model, bound, tape, tape.constant(inputs));
}

Tensor predict(const BridgeModel& model, const Tensor& inputs) {
    if (inputs.cols() != model.config.input_dim) {
        throw DimensionError("predict: input has " + std::to_string(inputs.cols()) +
                             " columns, model expects " + std::to_string(model.config.input_dim));
    }
    Tensor h = inputs;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        h = add_row(matmul(h, model.layers[l].weight), model.layers[l].bias);
        if (l + 1 < model.layers.size()) h = relu(h);
    }
    return h;
}

ad::NodeId l2_penalty(const BoundModel& bound, ad::Tape& tape) {
    ad::NodeId total = ad::sum(tape, ad::square(tape, bound.weights.front()));
    for (std::size_t l = 1; l < bound.weights.size(); ++l) {
        total = ad::add(tape, total, ad::sum(tape, ad::square(tape, bound.weights[l])));
    }
    return total;
}

double l2_penalty_value(const BridgeModel& model) {
    double total = 0.0;
    for (const auto& l : model.layers) total += sum(hadamard(l.weight, l.weight));
    return total;
}

OptimizerState make_optimizer(OptimizerKind kind, double lr, std::span<const Tensor* const> params) {
    OptimizerState state;
    state.kind = kind;
    state.lr = lr;
    for (const Tensor* p : params) {
        state.first_moment.emplace_back(p->rows(), p->cols());
        state.second_moment.emplace_back(p->rows(), p->cols());
    }
    return state;
}

void adam_step(OptimizerState& state, std::span<Tensor* const> params,
               std::span<const Tensor> grads) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw DimensionError("adam_step: parameter, gradient and moment counts differ");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(*params[i])) throw DimensionError("adam_step: gradient shape");
        if (!grads[i].all_finite()) {
            throw TrainingError("non-finite gradient in parameter tensor " + std::to_string(i) +
                                " at step " + std::to_string(state.step + 1));
        }
    }
    ++state.step;
    if (state.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            for (std::size_t k = 0; k < p.size(); ++k) p[k] -= state.lr * grads[i][k];
        }
        return;
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        const Tensor& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

nlohmann::json to_json(const BridgeModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : model.layers) {
        layers.push_back({{"rows", l.weight.rows()},
                          {"cols", l.weight.cols()},
                          {"weights", std::vector<double>(l.weight.data().begin(), l.weight.data().end())},
                          {"bias", std::vector<double>(l.bias.data().begin(), l.bias.data().end())}});
    }
    return {{"schema_version", kModelSchemaVersion},
            {"config",
             {{"input_dim", model.config.input_dim},
              {"depth", model.config.depth},
              {"width", model.config.width},
              {"activation", to_string(model.config.activation)}}},
            {"layers", layers}};
}

BridgeModel model_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("schema_version").get<int>() != kModelSchemaVersion) {
            throw ParseError("model: unsupported schema_version");
        }
        BridgeModel model;
        const auto& cfg = doc.at("config");
        model.config.input_dim = cfg.at("input_dim").get<std::size_t>();
        model.config.depth = cfg.at("depth").get<std::size_t>();
        model.config.width = cfg.at("width").get<std::size_t>();
        model.config.activation = parse_activation(cfg.at("activation").get<std::string>());
        model.config.validate();
        std::size_t fan_in = model.config.input_dim;
        for (const auto& l : doc.at("layers")) {
            const auto rows = l.at("rows").get<std::size_t>();
            const auto cols = l.at("cols").get<std::size_t>();
            if (rows != fan_in) throw ParseError("model: layer shapes do not chain");
            model.layers.push_back({Tensor(rows, cols, l.at("weights").get<std::vector<double>>()),
                                    Tensor(1, cols, l.at("bias").get<std::vector<double>>())});
            fan_in = cols;
        }
        if (model.layers.size() != model.config.depth || fan_in != 1) {
            throw ParseError("model: layer count or output width inconsistent with config");
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model: ") + e.what());
    } catch (const DimensionError& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
}

}  // namespace proxmmr::nn
