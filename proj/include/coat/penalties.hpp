#pragma once

#include <span>

#include "coat/models.hpp"
#include "coat/rng.hpp"

namespace coat {

/// Per-example input gradients [N, ...] of the per-example loss at x, as
/// differentiable nodes of a higher-order graph.
Var input_gradient_node(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y);

/// Batch mean of 1 - cos(grad l(x), grad l(x + eta)). With box_clip, x + eta
/// is clamped to [0,1]^d. stop_grad_second_arg detaches the x + eta gradient.
Var grad_align_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                       const Array& eta, bool box_clip, bool stop_grad_second_arg = false);
/// Same, drawing one eta ~ U([-eps, eps]^d) per example.
Var grad_align_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                       double eps, Rng& rng, bool box_clip, bool stop_grad_second_arg = false);

/// Batch mean of |grad l(x)|^2.
Var grad_norm_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y);

/// Batch mean of |grad l(x + delta) - grad l(x)|^2 with delta held constant.
Var cure_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                 const Array& delta);
/// Same with delta = eps * sign(grad l(x)) computed internally.
Var cure_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                 double eps, bool box_clip);

}  // namespace coat
