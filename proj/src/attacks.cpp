#include "coat/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "coat/ops.hpp"

namespace coat {

std::string to_string(AttackMethod m) {
    switch (m) {
        case AttackMethod::fgsm: return "fgsm";
        case AttackMethod::fgsm_rs: return "fgsm_rs";
        case AttackMethod::pgd: return "pgd";
        case AttackMethod::pgd_corner: return "pgd_corner";
    }
    return "unknown";
}

std::string to_string(AttackInit i) { return i == AttackInit::zero ? "zero" : "uniform_ball"; }

AttackMethod parse_attack_method(const std::string& s) {
    if (s == "fgsm") return AttackMethod::fgsm;
    if (s == "fgsm_rs") return AttackMethod::fgsm_rs;
    if (s == "pgd") return AttackMethod::pgd;
    if (s == "pgd_corner") return AttackMethod::pgd_corner;
    throw std::invalid_argument("unknown attack method '" + s + "' (expected fgsm, fgsm_rs, pgd, pgd_corner)");
}

AttackInit parse_attack_init(const std::string& s) {
    if (s == "zero") return AttackInit::zero;
    if (s == "uniform_ball") return AttackInit::uniform_ball;
    throw std::invalid_argument("unknown attack init '" + s + "' (expected zero, uniform_ball)");
}

AttackSpec AttackSpec::pgd_50_10(double eps, std::uint64_t seed) {
    return AttackSpec{AttackMethod::pgd, eps, eps / 4.0, 50, 10, AttackInit::uniform_ball, true, seed};
}

AttackSpec AttackSpec::fgsm_spec(double eps) { return AttackSpec{AttackMethod::fgsm, eps, eps, 1, 1, AttackInit::zero, true, 0}; }

void AttackSpec::validate() const {
    if (!(eps > 0.0)) throw std::invalid_argument("attack.eps must be > 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("attack.alpha must be >= 0");
    if (steps < 1) throw std::invalid_argument("attack.steps must be >= 1");
    if (restarts < 1) throw std::invalid_argument("attack.restarts must be >= 1");
    if (method == AttackMethod::fgsm_rs && alpha > 2.0 * eps) {
        throw std::invalid_argument("attack.alpha must lie in [0, 2*eps] for fgsm_rs");
    }
}

nlohmann::json AttackSpec::to_json() const {
    return {{"method", to_string(method)}, {"eps", eps},         {"alpha", alpha},       {"steps", steps},
            {"restarts", restarts},        {"init", to_string(init)}, {"box_clip", box_clip}, {"seed", seed}};
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
    AttackSpec s;
    s.method = parse_attack_method(j.at("method").get<std::string>());
    s.eps = j.at("eps").get<double>();
    s.alpha = j.at("alpha").get<double>();
    s.steps = j.at("steps").get<int>();
    s.restarts = j.at("restarts").get<int>();
    s.init = parse_attack_init(j.at("init").get<std::string>());
    s.box_clip = j.at("box_clip").get<bool>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

nlohmann::json AttackResult::to_json() const {
    const std::size_t n = loss.size();
    const std::size_t d = n ? delta.data.size() / n : 0;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        double l2 = 0, linf = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = delta.data[i * d + j];
            l2 += v * v;
            linf = std::max(linf, std::abs(v));
        }
        rows.push_back({{"loss", loss[i]}, {"success", static_cast<bool>(success[i])}, {"l2", std::sqrt(l2)}, {"linf", linf}});
    }
    return {{"iterations", iterations}, {"examples", rows}};
}

InputGrad input_gradient(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y) {
    Graph g;
    BoundParams p = bind(g, params, false);
    Var xv = g.variable(x);
    Var logits = model.logits(p, xv);
    Var per = model.per_example_loss(p, xv, y);
    InputGrad out;
    out.loss = per.value().data;
    out.pred = argmax_rows(logits.value());
    out.grad = g.gradients(sum(per), std::vector<Var>{xv})[0];
    return out;
}

InputGrad evaluate_point(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y) {
    Graph g;
    BoundParams p = bind(g, params, false);
    Var xv = g.constant(x);
    InputGrad out;
    out.pred = argmax_rows(model.logits(p, xv).value());
    out.loss = model.per_example_loss(p, xv, y).value().data;
    return out;
}

void project(std::span<double> delta, std::span<const double> x, double eps, bool box_clip) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
        double d = std::clamp(delta[i], -eps, eps);
        if (box_clip) d = std::clamp(x[i] + d, 0.0, 1.0) - x[i];
        delta[i] = d;
    }
}

void uniform_ball(std::span<double> out, double eps, Rng& rng) {
    std::uniform_real_distribution<double> u(-eps, eps);
    for (double& v : out) v = u(rng);
}

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Array add_arrays(const Array& a, const Array& b) {
    Array out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

void finish(AttackResult& r, const Model& model, const ParamSet& params, const Array& x, std::span<const int> y) {
    const InputGrad at = evaluate_point(model, params, add_arrays(x, r.delta), y);
    r.loss = at.loss;
    r.success.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) r.success[i] = at.pred[i] != y[i];
}

void check_finite_grad(const Array& g) {
    if (!all_finite(g.values())) throw NumericFault("non-finite input gradient in attack");
}

// `steps` signed-gradient ascent iterations from `start`.
Array pgd_run(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, Array delta,
              const AttackSpec& spec) {
    for (int s = 0; s < spec.steps; ++s) {
        const InputGrad ig = input_gradient(model, params, add_arrays(x, delta), y);
        check_finite_grad(ig.grad);
        for (std::size_t i = 0; i < delta.data.size(); ++i) delta.data[i] += spec.alpha * sgn(ig.grad.data[i]);
        project(delta.data, x.data, spec.eps, spec.box_clip);
    }
    return delta;
}

}  // namespace

AttackResult fgsm(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, double eps,
                  bool box_clip, std::optional<double> step) {
    if (!(eps > 0.0)) throw std::invalid_argument("fgsm: eps must be > 0");
    const double a = step.value_or(eps);
    const InputGrad ig = input_gradient(model, params, x, y);
    check_finite_grad(ig.grad);
    AttackResult r;
    r.delta = Array(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) r.delta.data[i] = a * sgn(ig.grad.data[i]);
    project(r.delta.data, x.data, eps, box_clip);
    r.iterations = 1;
    finish(r, model, params, x, y);
    return r;
}

AttackResult fgsm_rs(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, double eps,
                     double alpha, std::uint64_t seed, bool box_clip) {
    if (!(eps > 0.0)) throw std::invalid_argument("fgsm_rs: eps must be > 0");
    if (!(alpha >= 0.0 && alpha <= 2.0 * eps)) throw std::invalid_argument("fgsm_rs: alpha must lie in [0, 2*eps]");
    Rng rng = make_rng(seed, stream::attack);
    Array eta(x.shape);
    uniform_ball(eta.data, eps, rng);
    project(eta.data, x.data, eps, box_clip);
    AttackResult r;
    r.delta = eta;
    if (alpha > 0.0) {
        const InputGrad ig = input_gradient(model, params, add_arrays(x, eta), y);
        check_finite_grad(ig.grad);
        for (std::size_t i = 0; i < x.data.size(); ++i) r.delta.data[i] += alpha * sgn(ig.grad.data[i]);
        project(r.delta.data, x.data, eps, box_clip);
    }
    r.iterations = 1;
    finish(r, model, params, x, y);
    return r;
}

AttackResult pgd(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                 const AttackSpec& spec) {
    spec.validate();
    const std::size_t n = y.size();
    const std::size_t d = n ? x.data.size() / n : 0;
    AttackResult best;
    best.iterations = spec.steps * spec.restarts;
    const std::uint64_t base = derive_seed(spec.seed, stream::attack);
    for (int r = 0; r < spec.restarts; ++r) {
        Array start(x.shape);
        if (r > 0 && spec.init == AttackInit::uniform_ball) {
            Rng rng(derive_seed(base, static_cast<std::uint64_t>(r)));
            uniform_ball(start.data, spec.eps, rng);
            project(start.data, x.data, spec.eps, spec.box_clip);
        }
        AttackResult cur;
        cur.delta = pgd_run(model, params, x, y, std::move(start), spec);
        finish(cur, model, params, x, y);
        if (r == 0) {
            best.delta = std::move(cur.delta);
            best.loss = cur.loss;
            best.success = cur.success;
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (cur.success[i]) best.success[i] = true;
            if (cur.loss[i] > best.loss[i]) {
                best.loss[i] = cur.loss[i];
                std::copy_n(cur.delta.data.begin() + i * d, d, best.delta.data.begin() + i * d);
            }
        }
    }
    return best;
}

AttackResult pgd_corner(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                        const AttackSpec& spec) {
    AttackSpec inner = spec;
    inner.method = AttackMethod::pgd;
    AttackResult base = pgd(model, params, x, y, inner);
    AttackResult r;
    r.delta = base.delta;
    for (double& v : r.delta.data) v = v >= 0.0 ? spec.eps : -spec.eps;
    if (spec.box_clip) project(r.delta.data, x.data, spec.eps, true);
    r.iterations = base.iterations;
    finish(r, model, params, x, y);
    return r;
}

AttackResult run_attack(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                        const AttackSpec& spec) {
    spec.validate();
    switch (spec.method) {
        case AttackMethod::fgsm: return fgsm(model, params, x, y, spec.eps, spec.box_clip, spec.alpha);
        case AttackMethod::fgsm_rs: return fgsm_rs(model, params, x, y, spec.eps, spec.alpha, spec.seed, spec.box_clip);
        case AttackMethod::pgd: return pgd(model, params, x, y, spec);
        case AttackMethod::pgd_corner: return pgd_corner(model, params, x, y, spec);
    }
    throw std::invalid_argument("unknown attack method");
}

nlohmann::json RobustnessReport::to_json() const {
    return {{"clean_acc", clean_acc}, {"adv_acc", adv_acc},         {"subset_clean_acc", subset_clean_acc},
            {"n_clean", n_clean},     {"n_adv", n_adv},             {"attack", spec.to_json()},
            {"subsample_seed", subsample_seed}};
}

double accuracy(const Model& model, const ParamSet& params, const ImageDataset& ds, std::int64_t batch) {
    if (ds.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
    std::int64_t correct = 0;
    for (std::int64_t s = 0; s < ds.size(); s += batch) {
        std::vector<std::int64_t> idx;
        for (std::int64_t i = s; i < std::min(ds.size(), s + batch); ++i) idx.push_back(i);
        const auto pred = predict(model, params, ds.gather(idx));
        for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == ds.labels[idx[i]];
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

RobustnessReport evaluate_robustness(const Model& model, const ParamSet& params, const ImageDataset& ds,
                                     const AttackSpec& spec, std::int64_t n_adv, std::uint64_t subsample_seed,
                                     std::int64_t batch) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate_robustness: empty dataset");
    spec.validate();
    RobustnessReport rep;
    rep.spec = spec;
    rep.subsample_seed = subsample_seed;
    rep.n_clean = ds.size();
    rep.clean_acc = accuracy(model, params, ds, std::max<std::int64_t>(batch, 1));

    const auto idx = subsample_indices(ds.size(), std::min(n_adv, ds.size()), subsample_seed);
    rep.n_adv = static_cast<std::int64_t>(idx.size());
    std::int64_t robust = 0, clean = 0;
    for (std::int64_t s = 0; s < rep.n_adv; s += batch) {
        std::span<const std::int64_t> part(idx.data() + s, static_cast<std::size_t>(std::min(batch, rep.n_adv - s)));
        const Array x = ds.gather(part);
        const auto y = ds.gather_labels(part);
        const auto pred = predict(model, params, x);
        const AttackResult r = run_attack(model, params, x, y, spec);
        for (std::size_t i = 0; i < part.size(); ++i) {
            const bool ok = pred[i] == y[i];
            clean += ok;
            robust += ok && !r.success[i];
        }
    }
    rep.adv_acc = static_cast<double>(robust) / static_cast<double>(rep.n_adv);
    rep.subset_clean_acc = static_cast<double>(clean) / static_cast<double>(rep.n_adv);
    return rep;
}

}  // namespace coat
