#include "coat/penalties.hpp"

#include <algorithm>

#include "coat/attacks.hpp"
#include "coat/ops.hpp"

namespace coat {

namespace {

void require_higher_order(const Graph& g) {
    if (g.mode() != GradMode::higher_order) throw ModeError("gradient penalties need a higher-order graph");
}

Var batch_mean_sq_norm(Var v) { return mean(sum_trailing(mul(v, v))); }

}  // namespace

Var input_gradient_node(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y) {
    require_higher_order(g);
    Var xv = g.variable(x);
    Var l = sum(model.per_example_loss(p, xv, y));
    return g.backward(l, std::vector<Var>{xv}, true)[0];
}

Var grad_align_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                       const Array& eta, bool box_clip, bool stop_grad_second_arg) {
    if (eta.shape != x.shape) throw ShapeError("grad_align_penalty: eta " + to_string(eta.shape) + " vs x " + to_string(x.shape));
    Array xe(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        xe.data[i] = x.data[i] + eta.data[i];
        if (box_clip) xe.data[i] = std::clamp(xe.data[i], 0.0, 1.0);
    }
    Var g1 = input_gradient_node(g, model, p, x, y);
    Var g2 = input_gradient_node(g, model, p, xe, y);
    if (stop_grad_second_arg) g2 = detach(g2);
    Var c = cosine_rows(flatten_batch(g1), flatten_batch(g2));
    return mean(shift(neg(c), 1.0));
}

Var grad_align_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                       double eps, Rng& rng, bool box_clip, bool stop_grad_second_arg) {
    Array eta(x.shape);
    uniform_ball(eta.data, eps, rng);
    return grad_align_penalty(g, model, p, x, y, eta, box_clip, stop_grad_second_arg);
}

Var grad_norm_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y) {
    return batch_mean_sq_norm(flatten_batch(input_gradient_node(g, model, p, x, y)));
}

Var cure_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                 const Array& delta) {
    if (delta.shape != x.shape) throw ShapeError("cure_penalty: delta " + to_string(delta.shape) + " vs x " + to_string(x.shape));
    Array xd(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) xd.data[i] = x.data[i] + delta.data[i];
    Var g0 = input_gradient_node(g, model, p, x, y);
    Var g1 = input_gradient_node(g, model, p, xd, y);
    return batch_mean_sq_norm(flatten_batch(sub(g1, g0)));
}

Var cure_penalty(Graph& g, const Model& model, const BoundParams& p, const Array& x, std::span<const int> y,
                 double eps, bool box_clip) {
    require_higher_order(g);
    const AttackResult r = fgsm(model, *p.set, x, y, eps, box_clip);
    return cure_penalty(g, model, p, x, y, r.delta);
}

}  // namespace coat
