#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "coat/tensor.hpp"

namespace coat {

class Graph;

using NodeId = std::uint32_t;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
    Graph* graph = nullptr;
    NodeId id = 0;

    const Array& value() const;
    const Shape& shape() const;
    bool requires_grad() const;
};

/// In higher_order mode the backward pass records its own operations, so the
/// gradients it returns can be differentiated again (double backpropagation).
enum class GradMode { first_order, higher_order };

enum class OpKind : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    div,
    scale,
    shift,
    relu,
    sign,
    clamp,
    sqrt,
    reshape,
    sum_all,
    expand_scalar,
    sum_trailing,
    expand_trailing,
    sum_leading,
    expand_leading,
    channel_sum,
    expand_channel,
    matmul,
    transpose,
    conv2d,
    conv2d_input_grad,
    conv2d_weight_grad,
    softmax,
    softmax_xent,
    l2_norm,
};

std::string_view op_name(OpKind kind);

struct ConvGeometry {
    int stride = 1;
    int pad = 0;
    std::int64_t in_h = 0;  // input spatial extent, needed to size the input-gradient op
    std::int64_t in_w = 0;
};

struct OpAttrs {
    double a = 0.0;
    double b = 0.0;
    Shape shape;
    ConvGeometry conv;
    std::vector<int> labels;
};

/// Tape of operation records in creation order. Node inputs always precede
/// the node, so creation order is a topological order.
class Graph {
public:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<NodeId> inputs;
        Array value;
        bool requires_grad = false;
        OpAttrs attrs;
    };

    explicit Graph(GradMode mode = GradMode::first_order);
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    GradMode mode() const { return mode_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Array value);
    Var variable(Array value);

    const Node& node(NodeId id) const { return nodes_.at(id); }
    const Array& value(Var v) const { return nodes_.at(v.id).value; }

    /// Appends an op record. Throws NumericFault on non-finite output.
    Var record(OpKind kind, std::vector<NodeId> inputs, Array value, OpAttrs attrs = {});

    /// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
    /// A node unreachable from `output` gets an explicit zero gradient.
    /// With create_graph the returned gradients are differentiable nodes;
    /// that requires higher_order mode.
    std::vector<Var> backward(Var output, std::span<const Var> wrt, bool create_graph);
    std::vector<Var> backward(Var output, std::span<const Var> wrt);

    /// Same as backward but returns plain values.
    std::vector<Array> gradients(Var output, std::span<const Var> wrt);

    /// Minimum |input| over every ReLU recorded so far (infinity if none).
    double min_abs_relu_input() const;
    /// Concatenated activation masks of all ReLU nodes, for kink detection in
    /// finite-difference checks.
    std::vector<bool> relu_signature() const;

private:
    std::vector<Node> nodes_;
    GradMode mode_;
    bool recording_ = true;

    friend class RecordingScope;
};

/// Temporarily enables or disables recording of differentiable nodes.
class RecordingScope {
public:
    RecordingScope(Graph& g, bool enabled) : graph_(g), saved_(g.recording_) { g.recording_ = enabled; }
    ~RecordingScope() { graph_.recording_ = saved_; }
    RecordingScope(const RecordingScope&) = delete;
    RecordingScope& operator=(const RecordingScope&) = delete;

private:
    Graph& graph_;
    bool saved_;
};

}  // namespace coat
