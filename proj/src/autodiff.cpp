#include "proxmmr/autodiff.hpp"

#include <string>

#include "proxmmr/error.hpp"

namespace proxmmr::ad {

namespace {

void accumulate(Tensor& into, const Tensor& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

void accumulate_scaled(Tensor& into, const Tensor& g, double factor) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += factor * g[i];
}

// (Kᵀ r)_j, optionally skipping i == j.
Tensor matvec_t(const Tensor& k, const Tensor& r, bool exclude_diagonal) {
    const std::size_t n = r.rows();
    Tensor out(n, 1);
    double* o = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* krow = k.row(i).data();
        const double ri = r[i];
        for (std::size_t j = 0; j < n; ++j) o[j] += krow[j] * ri;
        if (exclude_diagonal) o[i] -= krow[i] * ri;
    }
    return out;
}

}  // namespace

double kernel_row_product(std::span<const double> k_row, const Tensor& r, std::size_t i,
                          bool exclude_diagonal) {
    const auto rv = r.data();
    if (!exclude_diagonal) return dot(k_row, rv);
    return dot(k_row.first(i), rv.first(i)) + dot(k_row.subspan(i + 1), rv.subspan(i + 1));
}

Tensor quadratic_form_rows(const Tensor& r, const Tensor& k, bool exclude_diagonal) {
    if (r.cols() != 1 || k.rows() != r.rows() || k.cols() != r.rows()) {
        throw DimensionError("quadratic_form: residual must be n x 1 and K n x n");
    }
    Tensor out(r.rows(), 1);
    for (std::size_t i = 0; i < r.rows(); ++i) {
        out[i] = kernel_row_product(k.row(i), r, i, exclude_diagonal);
    }
    return out;
}

double quadratic_form_value(const Tensor& r, const Tensor& k, bool exclude_diagonal) {
    const Tensor kr = quadratic_form_rows(r, k, exclude_diagonal);
    double s = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) s += r[i] * kr[i];
    return s;
}

void Tape::check(NodeId id) const {
    if (id >= nodes_.size()) {
        throw GraphError("node id " + std::to_string(id) + " is not on the tape (size " +
                         std::to_string(nodes_.size()) + ")");
    }
}

NodeId Tape::parameter(Tensor value) {
    Node n;
    n.op = Op::Parameter;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    parameters_.push_back(nodes_.size() - 1);
    return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId Tape::record(Op op, std::vector<NodeId> inputs, Tensor forward) {
    Node n;
    n.op = op;
    n.parents = std::move(inputs);
    n.value = std::move(forward);
    return record(std::move(n));
}

NodeId Tape::record(Node node) {
    if (node.op == Op::Parameter) throw GraphError("use Tape::parameter for leaves");
    node.requires_grad = false;
    for (NodeId p : node.parents) {
        check(p);
        node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
    }
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

const Tensor& Tape::value(NodeId id) const {
    check(id);
    return nodes_[id].value;
}

const Tensor& Tape::grad(NodeId id) const {
    check(id);
    return nodes_[id].grad;
}

const Node& Tape::node(NodeId id) const {
    check(id);
    return nodes_[id];
}

std::vector<Tensor> Tape::backward(NodeId root) {
    check(root);
    const Tensor& rv = nodes_[root].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw GraphError("backward: root must be 1x1, got " + std::to_string(rv.rows()) + "x" +
                         std::to_string(rv.cols()));
    }
    for (auto& n : nodes_) n.grad = Tensor(n.value.rows(), n.value.cols());
    nodes_[root].grad[0] = 1.0;

    for (NodeId id = root + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.parents.empty()) continue;
        const Tensor& g = n.grad;
        auto wants = [&](std::size_t i) { return nodes_[n.parents[i]].requires_grad; };
        auto pv = [&](std::size_t i) -> const Tensor& { return nodes_[n.parents[i]].value; };
        auto pg = [&](std::size_t i) -> Tensor& { return nodes_[n.parents[i]].grad; };

        switch (n.op) {
        case Op::Add:
            if (wants(0)) accumulate(pg(0), g);
            if (wants(1)) accumulate(pg(1), g);
            break;
        case Op::AddRow:
            if (wants(0)) accumulate(pg(0), g);
            if (wants(1)) accumulate(pg(1), column_sums(g));
            break;
        case Op::Subtract:
            if (wants(0)) accumulate(pg(0), g);
            if (wants(1)) accumulate_scaled(pg(1), g, -1.0);
            break;
        case Op::Multiply:
            if (wants(0)) accumulate(pg(0), hadamard(g, pv(1)));
            if (wants(1)) accumulate(pg(1), hadamard(g, pv(0)));
            break;
        case Op::MatMul:
            if (wants(0)) accumulate(pg(0), proxmmr::matmul(g, transpose(pv(1))));
            if (wants(1)) accumulate(pg(1), matmul_tn(pv(0), g));
            break;
        case Op::Relu: {
            Tensor& ga = pg(0);
            const Tensor& a = pv(0);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                if (a[i] > 0.0) ga[i] += g[i];
            }
            break;
        }
        case Op::Square: {
            Tensor& ga = pg(0);
            const Tensor& a = pv(0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * a[i] * g[i];
            break;
        }
        case Op::Sum: {
            Tensor& ga = pg(0);
            for (auto& v : ga.data()) v += g[0];
            break;
        }
        case Op::Mean: {
            Tensor& ga = pg(0);
            const double share = g[0] / static_cast<double>(ga.size());
            for (auto& v : ga.data()) v += share;
            break;
        }
        case Op::Scale:
            accumulate_scaled(pg(0), g, n.scalar);
            break;
        case Op::QuadraticForm: {
            // d(rᵀKr)/dr = (K + Kᵀ) r
            // Kr was kept from the forward pass; Kᵀr = Kr when K is symmetric.
            const Tensor& kr = n.cache;
            const Tensor ktr = n.symmetric ? kr : matvec_t(*n.matrix, pv(0), n.exclude_diagonal);
            Tensor& gr = pg(0);
            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g[0] * (kr[i] + ktr[i]);
            break;
        }
        case Op::Custom: {
            std::vector<const Tensor*> values;
            for (NodeId p : n.parents) values.push_back(&nodes_[p].value);
            auto grads = n.custom->backward(g, values, n.value);
            if (grads.size() != n.parents.size()) {
                throw GraphError("custom op returned wrong number of gradients");
            }
            for (std::size_t i = 0; i < grads.size(); ++i) {
                if (!wants(i)) continue;
                if (!grads[i].same_shape(pv(i))) throw GraphError("custom op gradient shape");
                accumulate(pg(i), grads[i]);
            }
            break;
        }
        case Op::Parameter:
        case Op::Constant:
            break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(parameters_.size());
    for (NodeId p : parameters_) out.push_back(nodes_[p].grad);
    return out;
}

NodeId add(Tape& tape, NodeId a, NodeId b) {
    return tape.record(Op::Add, {a, b}, proxmmr::add(tape.value(a), tape.value(b)));
}

NodeId add_row(Tape& tape, NodeId a, NodeId b) {
    return tape.record(Op::AddRow, {a, b}, proxmmr::add_row(tape.value(a), tape.value(b)));
}

NodeId subtract(Tape& tape, NodeId a, NodeId b) {
    return tape.record(Op::Subtract, {a, b}, proxmmr::subtract(tape.value(a), tape.value(b)));
}

NodeId multiply(Tape& tape, NodeId a, NodeId b) {
    return tape.record(Op::Multiply, {a, b}, hadamard(tape.value(a), tape.value(b)));
}

NodeId matmul(Tape& tape, NodeId a, NodeId b) {
    return tape.record(Op::MatMul, {a, b}, proxmmr::matmul(tape.value(a), tape.value(b)));
}

NodeId relu(Tape& tape, NodeId a) {
    return tape.record(Op::Relu, {a}, proxmmr::relu(tape.value(a)));
}

NodeId square(Tape& tape, NodeId a) {
    const Tensor& v = tape.value(a);
    return tape.record(Op::Square, {a}, hadamard(v, v));
}

NodeId sum(Tape& tape, NodeId a) {
    return tape.record(Op::Sum, {a}, Tensor(1, 1, proxmmr::sum(tape.value(a))));
}

NodeId mean(Tape& tape, NodeId a) {
    return tape.record(Op::Mean, {a}, Tensor(1, 1, proxmmr::mean(tape.value(a))));
}

NodeId scale(Tape& tape, NodeId a, double factor) {
    Node n;
    n.op = Op::Scale;
    n.parents = {a};
    n.value = proxmmr::scale(tape.value(a), factor);
    n.scalar = factor;
    return tape.record(std::move(n));
}

NodeId quadratic_form(Tape& tape, NodeId r, std::shared_ptr<const Tensor> k,
                      bool exclude_diagonal, bool symmetric) {
    const Tensor& rv = tape.value(r);
    Node n;
    n.op = Op::QuadraticForm;
    n.parents = {r};
    n.cache = quadratic_form_rows(rv, *k, exclude_diagonal);
    double s = 0.0;
    for (std::size_t i = 0; i < rv.rows(); ++i) s += rv[i] * n.cache[i];
    n.value = Tensor(1, 1, s);
    n.matrix = std::move(k);
    n.exclude_diagonal = exclude_diagonal;
    n.symmetric = symmetric;
    return tape.record(std::move(n));
}

NodeId custom(Tape& tape, std::vector<NodeId> inputs, Tensor forward,
              std::shared_ptr<const CustomOp> op) {
    Node n;
    n.op = Op::Custom;
    n.parents = std::move(inputs);
    n.value = std::move(forward);
    n.custom = std::move(op);
    return tape.record(std::move(n));
}

}  // namespace proxmmr::ad
