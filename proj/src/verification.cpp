#include "coat/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <stdexcept>

#include "coat/models.hpp"
#include "coat/ops.hpp"
#include "coat/penalties.hpp"
#include "coat/rng.hpp"

namespace coat {

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct OpCase {
    std::string name;
    std::vector<Array> inputs;
    Builder f;
    GradMode mode = GradMode::first_order;
};

Array randn(Shape s, Rng& rng, double scale = 1.0) {
    Array a(std::move(s));
    std::normal_distribution<double> nd(0.0, scale);
    for (double& v : a.data) v = nd(rng);
    return a;
}

Array uniform(Shape s, Rng& rng, double lo, double hi) {
    Array a(std::move(s));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : a.data) v = u(rng);
    return a;
}

/// Normal entries kept at least `margin` away from each point in `avoid`.
Array randn_avoiding(Shape s, Rng& rng, std::vector<double> avoid, double margin) {
    Array a(std::move(s));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : a.data) {
        do {
            v = nd(rng);
        } while (std::any_of(avoid.begin(), avoid.end(), [&](double p) { return std::abs(v - p) < margin; }));
    }
    return a;
}

Array positive(Shape s, Rng& rng) {
    Array a = uniform(std::move(s), rng, 0.5, 2.0);
    return a;
}

Array away_from_zero(Shape s, Rng& rng) {
    Array a = uniform(std::move(s), rng, 0.5, 2.0);
    std::bernoulli_distribution coin(0.5);
    for (double& v : a.data)
        if (coin(rng)) v = -v;
    return a;
}

std::vector<int> random_labels(int n, int k, Rng& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(n);
    for (int& v : y) v = u(rng);
    return y;
}

ConvGeometry random_geometry(Rng& rng, std::int64_t side) {
    std::uniform_int_distribution<int> s(1, 2), p(0, 1);
    return ConvGeometry{s(rng), p(rng), side, side};
}

std::int64_t conv_out(std::int64_t side, std::int64_t k, const ConvGeometry& g) {
    return (side + 2 * g.pad - k) / g.stride + 1;
}

OpCase model_case(ModelKind kind, Rng& rng) {
    ModelSpec spec;
    spec.kind = kind;
    spec.channels = 2;
    spec.num_classes = 3;
    if (kind == ModelKind::linear) {
        spec.side = 3;
    } else if (kind == ModelKind::single_layer_cnn) {
        spec.side = 5;
        spec.filters = 3;
    } else {
        spec.side = 6;
        spec.widths = {3, 4};
        spec.hidden = 5;
    }
    auto model = std::shared_ptr<Model>(make_model(spec));
    auto params = std::make_shared<ParamSet>(init_params(*model, InitScheme::kaiming(), rng()));
    // Nonzero biases so the bias gradients are exercised at a generic point.
    for (std::size_t i = 0; i < params->size(); ++i) {
        if ((*params)[i].value.shape.size() == 1) params->set(i, randn((*params)[i].value.shape, rng, 0.1));
    }
    const int n = 3;
    OpCase c;
    c.name = "model:" + to_string(kind);
    for (const auto& e : *params) c.inputs.push_back(e.value);
    c.inputs.push_back(uniform(model->input_shape(n), rng, 0.0, 1.0));
    auto y = random_labels(n, spec.num_classes, rng);
    c.f = [model, params, y](Graph&, const std::vector<Var>& v) {
        BoundParams bp{params.get(), std::vector<Var>(v.begin(), v.end() - 1)};
        return model->per_example_loss(bp, v.back(), y);
    };
    return c;
}

using CaseGen = std::function<OpCase(Rng&)>;

std::vector<CaseGen> op_generators() {
    std::vector<CaseGen> g;
    auto unary = [](std::string name, std::function<Array(Rng&)> in, std::function<Var(Var)> op) {
        return [name, in, op](Rng& rng) {
            return OpCase{name, {in(rng)}, [op](Graph&, const std::vector<Var>& v) { return op(v[0]); }};
        };
    };
    auto binary = [](std::string name, std::function<Array(Rng&)> a, std::function<Array(Rng&)> b,
                     std::function<Var(Var, Var)> op) {
        return [name, a, b, op](Rng& rng) {
            OpCase c{name, {a(rng), b(rng)}, [op](Graph&, const std::vector<Var>& v) { return op(v[0], v[1]); }};
            return c;
        };
    };
    auto n23 = [](Rng& r) { return randn({2, 3}, r); };
    g.push_back(binary("add", n23, n23, [](Var a, Var b) { return add(a, b); }));
    g.push_back(binary("sub", n23, n23, [](Var a, Var b) { return sub(a, b); }));
    g.push_back(binary("mul", n23, n23, [](Var a, Var b) { return mul(a, b); }));
    g.push_back(binary("div", n23, [](Rng& r) { return away_from_zero({2, 3}, r); },
                       [](Var a, Var b) { return div(a, b); }));
    g.push_back(unary("scale", n23, [](Var a) { return scale(a, -1.7); }));
    g.push_back(unary("shift", n23, [](Var a) { return shift(a, 0.3); }));
    g.push_back(unary("neg", n23, [](Var a) { return neg(a); }));
    g.push_back(unary("relu", n23, [](Var a) { return relu(a); }));
    g.push_back(unary("clamp", [](Rng& r) { return randn_avoiding({2, 3}, r, {-0.5, 0.5}, 1e-3); },
                      [](Var a) { return clamp(a, -0.5, 0.5); }));
    g.push_back(unary("clamp_min", [](Rng& r) { return randn_avoiding({2, 3}, r, {0.1}, 1e-3); },
                      [](Var a) { return clamp_min(a, 0.1); }));
    g.push_back(unary("sqrt", [](Rng& r) { return positive({2, 3}, r); }, [](Var a) { return sqrt(a); }));
    g.push_back(unary("reshape", n23, [](Var a) { return reshape(a, {3, 2}); }));
    g.push_back(unary("flatten_batch", [](Rng& r) { return randn({2, 2, 2, 2}, r); },
                      [](Var a) { return flatten_batch(a); }));
    g.push_back(unary("sum", n23, [](Var a) { return sum(a); }));
    g.push_back(unary("mean", n23, [](Var a) { return mean(a); }));
    g.push_back(unary("expand_scalar", [](Rng& r) { return Array::scalar(std::normal_distribution<double>()(r)); },
                      [](Var a) { return expand_scalar(a, {2, 3}); }));
    g.push_back(unary("sum_trailing", [](Rng& r) { return randn({2, 3, 2}, r); },
                      [](Var a) { return sum_trailing(a); }));
    g.push_back(unary("expand_trailing", [](Rng& r) { return randn({2}, r); },
                      [](Var a) { return expand_trailing(a, {2, 3, 2}); }));
    g.push_back(unary("sum_leading", [](Rng& r) { return randn({3, 2}, r); },
                      [](Var a) { return sum_leading(a); }));
    g.push_back(unary("expand_leading", [](Rng& r) { return randn({2}, r); },
                      [](Var a) { return expand_leading(a, 3); }));
    g.push_back(unary("channel_sum", [](Rng& r) { return randn({2, 3, 2, 2}, r); },
                      [](Var a) { return channel_sum(a); }));
    g.push_back(unary("expand_channel", [](Rng& r) { return randn({3}, r); },
                      [](Var a) { return expand_channel(a, {2, 3, 2, 2}); }));
    g.push_back(binary("matmul", n23, [](Rng& r) { return randn({3, 4}, r); },
                       [](Var a, Var b) { return matmul(a, b); }));
    g.push_back(unary("transpose", n23, [](Var a) { return transpose(a); }));
    g.push_back([](Rng& rng) {
        const ConvGeometry geo = random_geometry(rng, 5);
        return OpCase{"conv2d",
                      {randn({2, 2, 5, 5}, rng), randn({3, 2, 3, 3}, rng)},
                      [geo](Graph&, const std::vector<Var>& v) { return conv2d(v[0], v[1], geo.stride, geo.pad); }};
    });
    g.push_back([](Rng& rng) {
        const ConvGeometry geo = random_geometry(rng, 5);
        const auto o = conv_out(5, 3, geo);
        return OpCase{"conv2d_input_grad",
                      {randn({2, 3, o, o}, rng), randn({3, 2, 3, 3}, rng)},
                      [geo](Graph&, const std::vector<Var>& v) { return conv2d_input_grad(v[0], v[1], geo); }};
    });
    g.push_back([](Rng& rng) {
        const ConvGeometry geo = random_geometry(rng, 5);
        const auto o = conv_out(5, 3, geo);
        return OpCase{"conv2d_weight_grad",
                      {randn({2, 2, 5, 5}, rng), randn({2, 3, o, o}, rng)},
                      [geo](Graph&, const std::vector<Var>& v) {
                          return conv2d_weight_grad(v[0], v[1], geo, Shape{3, 2, 3, 3});
                      }};
    });
    g.push_back(binary("add_row_bias", n23, [](Rng& r) { return randn({3}, r); },
                       [](Var a, Var b) { return add_row_bias(a, b); }));
    g.push_back(binary("add_channel_bias", [](Rng& r) { return randn({2, 3, 2, 2}, r); },
                       [](Rng& r) { return randn({3}, r); }, [](Var a, Var b) { return add_channel_bias(a, b); }));
    g.push_back(unary("softmax", [](Rng& r) { return randn({2, 4}, r); }, [](Var a) { return softmax(a); }));
    g.push_back([](Rng& rng) {
        auto y = random_labels(3, 4, rng);
        return OpCase{"softmax_cross_entropy",
                      {randn({3, 4}, rng, 2.0)},
                      [y](Graph&, const std::vector<Var>& v) { return softmax_cross_entropy(v[0], y); }};
    });
    g.push_back(binary("dot", n23, n23, [](Var a, Var b) { return dot(a, b); }));
    g.push_back(unary("l2_norm", [](Rng& r) { return away_from_zero({2, 3}, r); }, [](Var a) { return l2_norm(a); }));
    g.push_back(binary("cosine_rows", [](Rng& r) { return randn({3, 4}, r); }, [](Rng& r) { return randn({3, 4}, r); },
                       [](Var a, Var b) { return cosine_rows(a, b); }));
    g.push_back(binary("cosine", n23, n23, [](Var a, Var b) { return cosine(a, b); }));
    g.push_back([](Rng& rng) { return model_case(ModelKind::linear, rng); });
    g.push_back([](Rng& rng) { return model_case(ModelKind::single_layer_cnn, rng); });
    g.push_back([](Rng& rng) { return model_case(ModelKind::small_conv_net, rng); });
    return g;
}

struct Eval {
    double value = 0;
    std::vector<bool> signature;
    double min_relu = 0;
};

/// Scalar functional sum(f(inputs) * weights).
Eval evaluate(const OpCase& c, const std::vector<Array>& inputs, const Array& weights) {
    Graph g(c.mode);
    std::vector<Var> vars;
    for (const Array& a : inputs) vars.push_back(g.constant(a));
    Var out = c.f(g, vars);
    const Array& v = out.value();
    double s = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) s += v.data[i] * weights.data[i];
    return {s, g.relu_signature(), g.min_abs_relu_input()};
}

struct Coord {
    std::size_t input;
    std::size_t index;
};

/// Compares analytic and central-difference derivatives on `n_coords`
/// random coordinates, skipping coordinates whose perturbation crosses a
/// kink. Returns the worst relative error, or nullopt when the base point is
/// too close to a kink.
std::optional<double> fd_compare(const std::vector<Array>& inputs, const std::vector<Array>& grads,
                                 const std::function<Eval(const std::vector<Array>&)>& eval, int n_coords, Rng& rng) {
    const Eval base = eval(inputs);
    if (base.min_relu < kKinkMargin) return std::nullopt;
    std::size_t total = 0;
    for (const Array& a : inputs) total += a.data.size();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    double worst = 0;
    int done = 0;
    for (int attempt = 0; attempt < 20 * n_coords && done < n_coords; ++attempt) {
        std::size_t flat = pick(rng);
        Coord c{0, 0};
        while (flat >= inputs[c.input].data.size()) flat -= inputs[c.input++].data.size();
        c.index = flat;
        std::vector<Array> plus = inputs, minus = inputs;
        plus[c.input].data[c.index] += kFdStep;
        minus[c.input].data[c.index] -= kFdStep;
        const Eval ep = eval(plus), em = eval(minus);
        if (ep.signature != base.signature || em.signature != base.signature) continue;
        const double fd = (ep.value - em.value) / (2.0 * kFdStep);
        worst = std::max(worst, relative_error(grads[c.input].data[c.index], fd));
        ++done;
    }
    return worst;
}

void record(FdSuite& s, const std::string& name, double rel) {
    ++s.cases;
    s.worst_rel = std::max(s.worst_rel, rel);
    if (!(rel <= s.tol)) {
        ++s.failed;
        s.failures.push_back(name + ": rel err " + fmt("%.3e", rel));
    }
}

}  // namespace

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

Check FdSuite::as_check() const {
    std::string d = std::to_string(cases - failed) + "/" + std::to_string(cases) + " cases, worst rel err " +
                    fmt("%.3e", worst_rel) + " (tol " + fmt("%.0e", tol) + ")";
    if (redraws > 0) d += ", " + std::to_string(redraws) + " kink redraws";
    if (!failures.empty()) d += "; first failure " + failures.front();
    return {name, ok(), d};
}

FdSuite verify_first_order(int n_cases, std::uint64_t seed, double tol) {
    FdSuite s;
    s.name = "first_order";
    s.tol = tol;
    const auto gens = op_generators();
    Rng rng = make_rng(seed, stream::analysis);
    for (int i = 0; i < n_cases; ++i) {
        const CaseGen& gen = gens[static_cast<std::size_t>(i) % gens.size()];
        for (int tries = 0;; ++tries) {
            if (tries == 50) {
                record(s, "case " + std::to_string(i) + " (no kink-free draw)", INFINITY);
                break;
            }
            OpCase c = gen(rng);
            Graph g(GradMode::first_order);
            std::vector<Var> vars;
            for (const Array& a : c.inputs) vars.push_back(g.variable(a));
            Var out = c.f(g, vars);
            Array weights = randn(out.shape(), rng);
            Var scalar = sum(mul(out, g.constant(weights)));
            const auto grads = g.gradients(scalar, vars);
            auto eval = [&](const std::vector<Array>& in) { return evaluate(c, in, weights); };
            const auto rel = fd_compare(c.inputs, grads, eval, 6, rng);
            if (!rel) {
                ++s.redraws;
                continue;
            }
            record(s, c.name, *rel);
            break;
        }
    }
    return s;
}

std::string to_string(PenaltyKind k) {
    switch (k) {
        case PenaltyKind::grad_align: return "grad_align";
        case PenaltyKind::grad_norm: return "grad_norm";
        case PenaltyKind::cure: return "cure";
    }
    return "unknown";
}

FdSuite verify_second_order(PenaltyKind kind, int n_cases, std::uint64_t seed, double tol) {
    FdSuite s;
    s.name = "second_order:" + to_string(kind);
    s.tol = tol;
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(kind) + 1), stream::analysis);
    const ModelKind kinds[] = {ModelKind::linear, ModelKind::single_layer_cnn, ModelKind::small_conv_net};
    for (int i = 0; i < n_cases; ++i) {
        const ModelKind mk = kinds[i % 3];
        const bool box_clip = (i / 3) % 2 == 1;
        for (int tries = 0;; ++tries) {
            if (tries == 50) {
                record(s, "case " + std::to_string(i) + " (no kink-free draw)", INFINITY);
                break;
            }
            // Reuse the model-case generator for the architecture, params and data.
            OpCase mc = model_case(mk, rng);
            ModelSpec spec;
            spec.kind = mk;
            spec.channels = 2;
            spec.num_classes = 3;
            spec.side = mk == ModelKind::linear ? 3 : (mk == ModelKind::single_layer_cnn ? 5 : 6);
            spec.filters = 3;
            spec.widths = {3, 4};
            spec.hidden = 5;
            auto model = make_model(spec);
            ParamSet params = init_params(*model, InitScheme::kaiming(), 0);
            for (std::size_t j = 0; j < params.size(); ++j) params.set(j, mc.inputs[j]);
            const Array x = mc.inputs.back();
            const auto y = random_labels(static_cast<int>(x.shape[0]), spec.num_classes, rng);
            const double eps = 0.1;
            const Array noise = uniform(x.shape, rng, -eps, eps);

            auto omega = [&](Graph& g, const BoundParams& bp) {
                switch (kind) {
                    case PenaltyKind::grad_align: return grad_align_penalty(g, *model, bp, x, y, noise, box_clip);
                    case PenaltyKind::grad_norm: return grad_norm_penalty(g, *model, bp, x, y);
                    case PenaltyKind::cure: return cure_penalty(g, *model, bp, x, y, noise);
                }
                throw std::logic_error("unknown penalty");
            };

            std::vector<Array> theta;
            for (const auto& e : params) theta.push_back(e.value);
            std::vector<Array> grads;
            {
                Graph g(GradMode::higher_order);
                BoundParams bp = bind(g, params, true);
                Var o = omega(g, bp);
                grads = g.gradients(o, bp.vars);
            }
            auto eval = [&](const std::vector<Array>& th) {
                ParamSet p = params;
                for (std::size_t j = 0; j < th.size(); ++j) p.set(j, th[j]);
                Graph g(GradMode::higher_order);
                BoundParams bp = bind(g, p, false);
                Var o = omega(g, bp);
                return Eval{o.value().item(), g.relu_signature(), g.min_abs_relu_input()};
            };
            const auto rel = fd_compare(theta, grads, eval, 4, rng);
            if (!rel) {
                ++s.redraws;
                continue;
            }
            record(s, to_string(mk), *rel);
            break;
        }
    }
    return s;
}

std::vector<FdSuite> verify_autodiff(int n_cases, std::uint64_t seed) {
    return {verify_first_order(n_cases, seed), verify_second_order(PenaltyKind::grad_align, n_cases, seed),
            verify_second_order(PenaltyKind::grad_norm, n_cases, seed),
            verify_second_order(PenaltyKind::cure, n_cases, seed)};
}

bool all_passed(const std::vector<Check>& checks) {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

Lemma1Checks verify_lemma1(double eps, std::int64_t d, const std::vector<double>& alpha_over_eps, int n_mc,
                           std::uint64_t seed) {
    std::vector<double> alphas;
    for (double r : alpha_over_eps) alphas.push_back(r * eps);
    Lemma1Checks out{lemma1_verify(eps, d, alphas, n_mc, seed), {}};
    bool jensen = true, exact = true, invariant = true;
    std::string jd, ed, id;
    for (const auto& r : out.report.rows) {
        const std::string at = "alpha/eps=" + fmt("%.3g", r.alpha / eps);
        // At alpha = 2 eps the norm is deterministic and se is 0; allow for summation rounding.
        if (!(r.mc_mean <= r.bound + 3.0 * r.mc_se + 1e-12 * r.bound)) {
            jensen = false;
            jd += at + " mc " + fmt("%.6g", r.mc_mean) + " > bound " + fmt("%.6g", r.bound) + "; ";
        }
        if (!(std::abs(r.mc_sq_mean - r.second_moment) <= 3.0 * r.mc_sq_se)) {
            exact = false;
            ed += at + " mc " + fmt("%.6g", r.mc_sq_mean) + " vs " + fmt("%.6g", r.second_moment) + "; ";
        }
        const double se = std::sqrt(r.mc_se * r.mc_se + r.mc_se_b * r.mc_se_b);
        if (!(std::abs(r.mc_mean - r.mc_mean_b) <= 3.0 * se)) {
            invariant = false;
            id += at + " " + fmt("%.6g", r.mc_mean) + " vs " + fmt("%.6g", r.mc_mean_b) + "; ";
        }
    }
    out.checks.push_back({"mc_mean_below_bound", jensen, jensen ? "MC E|delta| <= bound + 3 se at every alpha" : jd});
    out.checks.push_back({"second_moment_exact", exact, exact ? "MC E|delta|^2 within 3 se of closed form" : ed});
    out.checks.push_back({"sign_pattern_invariance", invariant, invariant ? "two sign patterns agree within 3 se" : id});
    for (const auto& r : out.report.rows) {
        if (std::abs(r.alpha / eps - 1.25) > 1e-12) continue;
        const double scaled = r.mc_mean / std::sqrt(static_cast<double>(d)) * 255.0;
        const bool ok = std::abs(scaled - 7.1) <= 0.2;
        out.checks.push_back({"norm_at_1.25eps", ok,
                              "E|delta|_2 = " + fmt("%.4f", scaled) + "/255 sqrt(d) (target 7.1 +- 0.2)"});
    }
    return out;
}

Lemma2Checks verify_lemma2(const Lemma2Setup& st, std::uint64_t seed) {
    Lemma2Checks out;
    out.bound = lemma2_bound(st.eps_grid, st.p, st.n_mc, seed, st.sigma_w);
    for (std::size_t i = 0; i < st.eps_grid.size(); ++i) {
        out.empirical.push_back(lemma2_empirical(st.eps_grid[i], st.p, st.k, st.m, st.sigma_w, st.sigma_u, st.n_trials,
                                                 derive_seed(seed, 100 + i), st.n_limit));
    }
    bool in_range = true, band = true, monotone = true, hoeff = true, limiting = true, empirical = true;
    std::string rd, bd, md, hd, ld, ed;
    double prev = INFINITY;
    for (std::size_t i = 0; i < out.bound.rows.size(); ++i) {
        const auto& r = out.bound.rows[i];
        const auto& e = out.empirical[i];
        const std::string at = "eps=" + fmt("%.3g", r.eps);
        if (!(r.final_bound >= 0.5 && r.final_bound <= 1.0)) {
            in_range = false;
            rd += at + " " + fmt("%.4f", r.final_bound) + "; ";
        }
        if (!(r.final_bound >= st.band_low)) {
            band = false;
            bd += at + " " + fmt("%.4f", r.final_bound) + "; ";
        }
        if (!(r.final_bound <= prev)) {
            monotone = false;
            md += at + "; ";
        }
        prev = r.final_bound;
        if (!(r.hoeffding_bound >= r.final_bound)) {
            hoeff = false;
            hd += at + "; ";
        }
        const double lse = std::sqrt(e.limiting_se * e.limiting_se + r.bound_se * r.bound_se);
        if (!(e.limiting >= r.final_bound - 3.0 * lse)) {
            limiting = false;
            ld += at + " " + fmt("%.4f", e.limiting) + "; ";
        }
        const double ese = std::sqrt(e.se * e.se + r.bound_se * r.bound_se);
        if (!(e.mean >= r.final_bound - 3.0 * ese)) {
            empirical = false;
            ed += at + " " + fmt("%.4f", e.mean) + " < " + fmt("%.4f", r.final_bound) + "; ";
        }
    }
    out.checks.push_back({"bound_in_[0.5,1]", in_range, in_range ? "final bound within [0.5, 1] on the grid" : rd});
    out.checks.push_back({"bound_in_band", band,
                          band ? "final bound >= " + fmt("%.2f", st.band_low) + " on the grid"
                               : "below " + fmt("%.2f", st.band_low) + " at " + bd});
    out.checks.push_back({"bound_monotone", monotone, monotone ? "non-increasing in eps" : md});
    out.checks.push_back({"hoeffding_above_final", hoeff, hoeff ? "Hoeffding variant >= final bound" : hd});
    out.checks.push_back({"limiting_above_bound", limiting, limiting ? "limiting cosine >= bound - 3 se" : ld});
    out.checks.push_back({"empirical_above_bound", empirical,
                          empirical ? "k=" + std::to_string(st.k) + ",m=" + std::to_string(st.m) +
                                          " cosine mean >= bound - 3 se"
                                    : ed});
    return out;
}

std::string Lemma2Checks::to_csv() const {
    std::string out =
        "p,eps,expectation,expectation_se,final_bound,bound_se,hoeffding_bound,hoeffding_clipped,empirical_mean,"
        "empirical_se,limiting,limiting_se\n";
    for (std::size_t i = 0; i < bound.rows.size(); ++i) {
        const auto& r = bound.rows[i];
        const auto& e = empirical[i];
        char buf[512];
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d,%.10g,%.10g,%.10g,%.10g\n", bound.p,
                      r.eps, r.expectation, r.expectation_se, r.final_bound, r.bound_se, r.hoeffding_bound,
                      r.hoeffding_clipped ? 1 : 0, e.mean, e.se, e.limiting, e.limiting_se);
        out += buf;
    }
    return out;
}

}  // namespace coat
