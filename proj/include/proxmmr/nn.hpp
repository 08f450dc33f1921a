#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxmmr/autodiff.hpp"
#include "proxmmr/tensor.hpp"

namespace proxmmr::nn {

enum class Activation { Relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Fully connected network with scalar output. `depth` counts affine layers:
/// depth 1 is a single input -> 1 map, depth L has L-1 hidden layers of `width`.
struct MlpConfig {
    std::size_t input_dim = 2;
    std::size_t depth = 3;
    std::size_t width = 80;
    Activation activation = Activation::Relu;
    std::uint64_t seed = 0;

    void validate() const;
};

/// weight is fan_in x fan_out, bias is 1 x fan_out; the layer maps x to x·W + b.
struct DenseLayer {
    Tensor weight;
    Tensor bias;
};

struct BridgeModel {
    MlpConfig config;
    std::vector<DenseLayer> layers;

    std::size_t parameter_count() const;
    /// Pointers to every parameter tensor in canonical order (w0, b0, w1, b1, ...).
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
};

/// He-uniform weights in ±sqrt(6 / fan_in), zero biases.
BridgeModel init_mlp(const MlpConfig& config, Rng& rng);
/// Same, drawing from Rng(config.seed).
BridgeModel init_mlp(const MlpConfig& config);

/// Parameter node ids of a model placed on a tape, in canonical order.
struct BoundModel {
    std::vector<ad::NodeId> weights;
    std::vector<ad::NodeId> biases;
};

BoundModel bind(const BridgeModel& model, ad::Tape& tape);

/// Records the forward pass; returns the n x 1 prediction node.
ad::NodeId forward(const BridgeModel& model, const BoundModel& bound, ad::Tape& tape,
                   ad::NodeId inputs);
/// Convenience: binds parameters, records inputs as a constant, runs forward.
ad::NodeId forward(const BridgeModel& model, const Tensor& inputs, ad::Tape& tape);

/// Tape-free forward evaluation; bit-identical to the recorded forward pass.
Tensor predict(const BridgeModel& model, const Tensor& inputs);

/// Sum of squared weight-matrix entries (biases excluded).
ad::NodeId l2_penalty(const BoundModel& bound, ad::Tape& tape);
double l2_penalty_value(const BridgeModel& model);

// ---------------------------------------------------------------------------
// Optimisation

enum class OptimizerKind { Adam, Sgd };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

/// Zero-initialised moment buffers shaped like `params`.
OptimizerState make_optimizer(OptimizerKind kind, double lr, std::span<const Tensor* const> params);

/// One bias-corrected Adam step (or plain SGD, depending on state.kind).
/// Throws TrainingError if any gradient entry is non-finite; params are left untouched then.
void adam_step(OptimizerState& state, std::span<Tensor* const> params,
               std::span<const Tensor> grads);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kModelSchemaVersion = 1;

nlohmann::json to_json(const BridgeModel& model);
BridgeModel model_from_json(const nlohmann::json& doc);

}  // namespace proxmmr::nn
