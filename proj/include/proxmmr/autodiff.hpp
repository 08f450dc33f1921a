#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "proxmmr/tensor.hpp"

namespace proxmmr::ad {

using NodeId = std::size_t;

enum class Op {
    Parameter,
    Constant,
    Add,
    AddRow,
    Subtract,
    Multiply,
    MatMul,
    Relu,
    Square,
    Sum,
    Mean,
    Scale,
    QuadraticForm,
    Custom,
};

/// User-defined differentiable operation. `backward` returns one gradient per
/// parent (same shape as the parent's value), given the upstream gradient of
/// the node's own value.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    virtual std::vector<Tensor> backward(const Tensor& upstream,
                                         std::span<const Tensor* const> parent_values,
                                         const Tensor& value) const = 0;
};

struct Node {
    Op op = Op::Constant;
    std::vector<NodeId> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    // Op-specific payload.
    double scalar = 0.0;
    std::shared_ptr<const Tensor> matrix;
    bool exclude_diagonal = false;
    bool symmetric = false;
    Tensor cache;
    std::shared_ptr<const CustomOp> custom;
};

/// Append-only define-by-run computation graph. Node ids are assigned in
/// recording order, so parents always precede children.
class Tape {
public:
    /// Leaf whose gradient is reported by backward().
    NodeId parameter(Tensor value);
    /// Leaf treated as data; no gradient is reported for it.
    NodeId constant(Tensor value);

    /// Append a node computed elsewhere. Throws GraphError on an unknown input id.
    NodeId record(Op op, std::vector<NodeId> inputs, Tensor forward);
    NodeId record(Node node);

    /// Reverse sweep from a 1x1 root. Gradients are reset first, so repeated
    /// calls give identical results. Returns gradients for parameters(), in order.
    std::vector<Tensor> backward(NodeId root);

    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;
    const Node& node(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const { return parameters_; }

private:
    void check(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;
};

NodeId add(Tape& tape, NodeId a, NodeId b);
/// a (n x m) plus row vector b (1 x m) broadcast over rows.
NodeId add_row(Tape& tape, NodeId a, NodeId b);
NodeId subtract(Tape& tape, NodeId a, NodeId b);
NodeId multiply(Tape& tape, NodeId a, NodeId b);
NodeId matmul(Tape& tape, NodeId a, NodeId b);
/// Subgradient at zero is zero.
NodeId relu(Tape& tape, NodeId a);
NodeId square(Tape& tape, NodeId a);
NodeId sum(Tape& tape, NodeId a);
NodeId mean(Tape& tape, NodeId a);
NodeId scale(Tape& tape, NodeId a, double factor);
/// rᵀ K r for an n x 1 residual node and constant n x n matrix K. With
/// `exclude_diagonal` the i == j terms are dropped (K with zeroed diagonal).
/// `symmetric` promises K == Kᵀ, which lets the backward pass reuse K r.
NodeId quadratic_form(Tape& tape, NodeId r, std::shared_ptr<const Tensor> k,
                      bool exclude_diagonal = false, bool symmetric = false);
NodeId custom(Tape& tape, std::vector<NodeId> inputs, Tensor forward,
              std::shared_ptr<const CustomOp> op);

/// Σ_j K_ij r_j for row i (j == i skipped when excluding the diagonal), in the
/// evaluation order shared by every quadratic-form path.
double kernel_row_product(std::span<const double> k_row, const Tensor& r, std::size_t i,
                          bool exclude_diagonal);
/// rᵀ K r (optionally off-diagonal only) evaluated without a tape.
double quadratic_form_value(const Tensor& r, const Tensor& k, bool exclude_diagonal);

}  // namespace proxmmr::ad
