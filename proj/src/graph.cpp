#include "coat/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "coat/ops.hpp"

namespace coat {

const Array& Var::value() const {
    if (!graph) throw std::invalid_argument("use of an unbound Var");
    return graph->value(*this);
}

const Shape& Var::shape() const { return value().shape; }

bool Var::requires_grad() const {
    if (!graph) throw std::invalid_argument("use of an unbound Var");
    return graph->node(id).requires_grad;
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::scale: return "scale";
        case OpKind::shift: return "shift";
        case OpKind::relu: return "relu";
        case OpKind::sign: return "sign";
        case OpKind::clamp: return "clamp";
        case OpKind::sqrt: return "sqrt";
        case OpKind::reshape: return "reshape";
        case OpKind::sum_all: return "sum";
        case OpKind::expand_scalar: return "expand_scalar";
        case OpKind::sum_trailing: return "sum_trailing";
        case OpKind::expand_trailing: return "expand_trailing";
        case OpKind::sum_leading: return "sum_leading";
        case OpKind::expand_leading: return "expand_leading";
        case OpKind::channel_sum: return "channel_sum";
        case OpKind::expand_channel: return "expand_channel";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::conv2d: return "conv2d";
        case OpKind::conv2d_input_grad: return "conv2d_input_grad";
        case OpKind::conv2d_weight_grad: return "conv2d_weight_grad";
        case OpKind::softmax: return "softmax";
        case OpKind::softmax_xent: return "softmax_cross_entropy";
        case OpKind::l2_norm: return "l2_norm";
    }
    return "unknown";
}

Graph::Graph(GradMode mode) : mode_(mode) {}

Var Graph::constant(Array value) {
    if (!all_finite(value.values())) throw NumericFault("non-finite value in constant");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::variable(Array value) {
    if (!all_finite(value.values())) throw NumericFault("non-finite value in variable");
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Array value, OpAttrs attrs) {
    if (!all_finite(value.values())) {
        throw NumericFault(std::string(op_name(kind)) + " produced a non-finite value");
    }
    bool rg = false;
    if (recording_ && kind != OpKind::sign) {
        for (NodeId in : inputs) {
            if (in >= nodes_.size()) throw std::logic_error("graph invariant violated: input does not precede node");
            rg = rg || nodes_[in].requires_grad;
        }
    }
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.attrs = std::move(attrs);
    if (rg) n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

std::vector<Var> Graph::backward(Var output, std::span<const Var> wrt) {
    return backward(output, wrt, mode_ == GradMode::higher_order);
}

std::vector<Var> Graph::backward(Var output, std::span<const Var> wrt, bool create_graph) {
    if (output.graph != this) throw std::invalid_argument("backward: output belongs to another graph");
    if (create_graph && mode_ != GradMode::higher_order) {
        throw ModeError("backward: create_graph requires a higher-order graph");
    }
    if (numel(nodes_.at(output.id).value.shape) != 1) {
        throw ShapeError("backward: output must be scalar, got shape " + to_string(nodes_[output.id].value.shape));
    }
    for (const Var& w : wrt) {
        if (w.graph != this) throw std::invalid_argument("backward: wrt node belongs to another graph");
    }

    const NodeId last = output.id;
    // Nodes from which some wrt node is reachable; everything else is skipped.
    std::vector<bool> needed(static_cast<std::size_t>(last) + 1, false);
    for (const Var& w : wrt)
        if (w.id <= last) needed[w.id] = nodes_[w.id].requires_grad;
    for (NodeId id = 0; id <= last; ++id) {
        if (needed[id] || !nodes_[id].requires_grad) continue;
        for (NodeId in : nodes_[id].inputs) {
            if (in >= id) throw std::logic_error("graph invariant violated: cycle detected in backward");
            if (needed[in]) {
                needed[id] = true;
                break;
            }
        }
    }

    std::vector<std::optional<Var>> adjoint(static_cast<std::size_t>(last) + 1);
    RecordingScope scope(*this, create_graph);
    if (needed[last]) adjoint[last] = constant(Array(nodes_[last].value.shape, 1.0));

    for (NodeId id = last + 1; id-- > 0;) {
        if (!adjoint[id] || nodes_[id].kind == OpKind::leaf) continue;
        const std::vector<NodeId> inputs = nodes_[id].inputs;
        std::vector<bool> want(inputs.size());
        bool any = false;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            want[i] = needed[inputs[i]];
            any = any || want[i];
        }
        if (!any) continue;
        auto contributions = detail::vjp(*this, id, *adjoint[id], want);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!want[i] || !contributions[i]) continue;
            const NodeId in = inputs[i];
            adjoint[in] = adjoint[in] ? add(*adjoint[in], *contributions[i]) : *contributions[i];
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        if (w.id <= last && adjoint[w.id]) {
            out.push_back(*adjoint[w.id]);
        } else {
            out.push_back(constant(Array(nodes_.at(w.id).value.shape, 0.0)));
        }
    }
    return out;
}

std::vector<Array> Graph::gradients(Var output, std::span<const Var> wrt) {
    auto vars = backward(output, wrt, false);
    std::vector<Array> out;
    out.reserve(vars.size());
    for (const Var& v : vars) out.push_back(value(v));
    return out;
}

double Graph::min_abs_relu_input() const {
    double m = std::numeric_limits<double>::infinity();
    for (const Node& n : nodes_) {
        if (n.kind == OpKind::relu) m = std::min(m, n.attrs.a);
    }
    return m;
}

std::vector<bool> Graph::relu_signature() const {
    std::vector<bool> sig;
    for (const Node& n : nodes_) {
        if (n.kind != OpKind::relu) continue;
        for (double v : n.value.data) sig.push_back(v > 0.0);
    }
    return sig;
}

}  // namespace coat
