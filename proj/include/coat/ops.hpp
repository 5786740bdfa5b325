#pragma once

#include <limits>
#include <span>

#include "coat/graph.hpp"

namespace coat {

// Elementwise ops require identical shapes; broadcasting is explicit through
// the expand_* ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);
Var neg(Var a);
Var relu(Var a);
/// sign(0) == 0. Not differentiable: the result is always a constant.
Var sign(Var a);
Var clamp(Var a, double lo, double hi);
Var clamp_min(Var a, double lo);
Var sqrt(Var a);
/// Copy with no gradient flow.
Var detach(Var a);

Var reshape(Var a, Shape shape);
Var flatten_batch(Var a);  // [N, ...] -> [N, prod(...)]

Var sum(Var a);   // -> scalar
Var mean(Var a);  // -> scalar
Var expand_scalar(Var s, Shape shape);
Var sum_trailing(Var a);                  // [N, ...] -> [N]
Var expand_trailing(Var v, Shape shape);  // [N] -> [N, ...]
Var sum_leading(Var a);                   // [N, K...] -> [K...]
Var expand_leading(Var v, std::int64_t n);
Var channel_sum(Var a);                   // [N, C, H, W] -> [C]
Var expand_channel(Var v, Shape shape);   // [C] -> [N, C, H, W]

Var matmul(Var a, Var b);  // [N, K] x [K, M]
Var transpose(Var a);      // 2-D only

/// x: [N, C, H, W], w: [F, C, KH, KW]; zero padding.
Var conv2d(Var x, Var w, int stride = 1, int pad = 0);
/// Adjoint of conv2d with respect to its input.
Var conv2d_input_grad(Var g, Var w, const ConvGeometry& geom);
/// Adjoint of conv2d with respect to its filters.
Var conv2d_weight_grad(Var x, Var g, const ConvGeometry& geom, const Shape& w_shape);

Var add_row_bias(Var x, Var b);      // [N, K] + [K]
Var add_channel_bias(Var x, Var b);  // [N, C, H, W] + [C]

Var softmax(Var logits);  // row-wise over [N, K]
/// Per-example cross-entropy [N]; max-shifted log-sum-exp.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

Var dot(Var a, Var b);
/// Euclidean norm; its gradient at the origin is defined as zero.
Var l2_norm(Var a);

/// Row-wise cosine of [N, ...] tensors -> [N]. Denominator is
/// max(|a||b|, 1e-10); rows where both vectors are exactly zero give 1.
Var cosine_rows(Var a, Var b);
/// Cosine of two tensors viewed as flat vectors -> scalar.
Var cosine(Var a, Var b);

inline constexpr double kCosineFloor = 1e-10;

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

namespace detail {
/// Vector-Jacobian products of node `id`, in input order; nullopt means no
/// contribution. Only inputs flagged in `want` are computed. Expressed with
/// graph ops so that recording them yields a differentiable backward pass.
std::vector<std::optional<Var>> vjp(Graph& g, NodeId id, Var upstream, const std::vector<bool>& want);
}  // namespace detail

}  // namespace coat
