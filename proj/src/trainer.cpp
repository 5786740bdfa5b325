#include "coat/trainer.hpp"

#include <chrono>
#include <cmath>

#include "coat/ops.hpp"
#include "coat/penalties.hpp"

namespace coat {

std::string to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::standard: return "standard";
        case TrainMethod::fgsm_at: return "fgsm_at";
        case TrainMethod::fgsm_rs_at: return "fgsm_rs_at";
        case TrainMethod::pgd_at: return "pgd_at";
        case TrainMethod::pgd_corner_at: return "pgd_corner_at";
        case TrainMethod::free_at: return "free_at";
        case TrainMethod::fgsm_gradalign: return "fgsm_gradalign";
        case TrainMethod::pgd_gradalign: return "pgd_gradalign";
        case TrainMethod::fgsm_gradnorm: return "fgsm_gradnorm";
        case TrainMethod::fgsm_cure: return "fgsm_cure";
    }
    return "unknown";
}

TrainMethod parse_train_method(const std::string& s) {
    for (auto m : {TrainMethod::standard, TrainMethod::fgsm_at, TrainMethod::fgsm_rs_at, TrainMethod::pgd_at,
                   TrainMethod::pgd_corner_at, TrainMethod::free_at, TrainMethod::fgsm_gradalign,
                   TrainMethod::pgd_gradalign, TrainMethod::fgsm_gradnorm, TrainMethod::fgsm_cure}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown method '" + s +
                                "' (expected standard, fgsm_at, fgsm_rs_at, pgd_at, pgd_corner_at, free_at, "
                                "fgsm_gradalign, pgd_gradalign, fgsm_gradnorm, fgsm_cure)");
}

bool MethodSpec::has_penalty() const {
    return kind == TrainMethod::fgsm_gradalign || kind == TrainMethod::pgd_gradalign ||
           kind == TrainMethod::fgsm_gradnorm || kind == TrainMethod::fgsm_cure;
}

double MethodSpec::alpha_factor() const {
    if (alpha_over_eps) return *alpha_over_eps;
    switch (kind) {
        case TrainMethod::fgsm_rs_at: return 1.25;
        case TrainMethod::pgd_at:
        case TrainMethod::pgd_corner_at:
        case TrainMethod::pgd_gradalign: return steps == 2 ? 0.5 : 2.0 / steps;
        default: return 1.0;
    }
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
    if (epochs < 1) fail("epochs: must be >= 1");
    if (batch_size < 1) fail("batch_size: must be >= 1");
    if (method.kind != TrainMethod::standard && !(eps > 0.0)) fail("eps: must be > 0");
    if (eps < 0.0) fail("eps: must be >= 0");
    if (method.lambda < 0.0) fail("method.lambda: must be >= 0");
    if (method.lambda > 0.0 && !method.has_penalty()) fail("method.lambda: only regularized methods take a lambda");
    const bool pgd_like = method.kind == TrainMethod::pgd_at || method.kind == TrainMethod::pgd_corner_at ||
                          method.kind == TrainMethod::pgd_gradalign;
    if (pgd_like && method.steps < 1) fail("method.steps: must be >= 1");
    if (method.kind == TrainMethod::free_at && method.replay < 1) fail("method.replay: must be >= 1");
    if (method.alpha_over_eps && *method.alpha_over_eps < 0.0) fail("method.alpha_over_eps: must be >= 0");
    if (method.kind == TrainMethod::fgsm_rs_at && method.alpha_factor() > 2.0) fail("method.alpha_over_eps: must lie in [0, 2] for fgsm_rs_at");
    if (!(optimizer.lr > 0.0)) fail("optimizer.lr: must be > 0");
    if (!(schedule.max_lr > 0.0)) fail("optimizer.lr: must be > 0");
    if (!(schedule.peak_fraction > 0.0 && schedule.peak_fraction < 1.0)) fail("schedule.peak_fraction: must lie in (0, 1)");
    if (eval_every < 1) fail("eval_every: must be >= 1");
    if (eps_warmup_epochs < 0) fail("eps_warmup_epochs: must be >= 0");
    if (eval_train_points < 1) fail("eval_train_points: must be >= 1");
    if (eval_test_points < 1) fail("eval_test_points: must be >= 1");
    if (align_points < 1) fail("align_points: must be >= 1");
    if (eval_pgd_steps < 1) fail("eval_pgd_steps: must be >= 1");
    if (eval_pgd_restarts < 1) fail("eval_pgd_restarts: must be >= 1");
    if (align_eta < 1) fail("align_eta: must be >= 1");
    if (init.kind == InitScheme::Kind::gaussian && !(init.sigma_w > 0.0 && init.sigma_u > 0.0)) {
        fail(init.sigma_w > 0.0 ? "init.sigma_u: must be > 0" : "init.sigma_w: must be > 0");
    }
}

int TrainConfig::effective_epochs() const {
    if (method.kind != TrainMethod::free_at) return epochs;
    return std::max(1, epochs / method.replay);
}

EvalSubsets eval_subsets(const TrainConfig& cfg, const ImageDataset& train, const ImageDataset& test) {
    const std::uint64_t s = derive_seed(cfg.seed, stream::eval);
    return {subsample_indices(train.size(), std::min(cfg.eval_train_points, train.size()), s),
            subsample_indices(test.size(), std::min(cfg.eval_test_points, test.size()), s + 1)};
}

AttackSpec eval_pgd_spec(const TrainConfig& cfg, double eps) {
    AttackSpec a;
    a.method = AttackMethod::pgd;
    a.eps = eps;
    a.alpha = eps / 4.0;
    a.steps = cfg.eval_pgd_steps;
    a.restarts = cfg.eval_pgd_restarts;
    a.init = AttackInit::uniform_ball;
    a.box_clip = cfg.box_clip;
    a.seed = derive_seed(cfg.seed, stream::eval);
    return a;
}

namespace {

double frac_correct(const std::vector<bool>& success) {
    std::int64_t ok = 0;
    for (bool s : success) ok += !s;
    return static_cast<double>(ok) / static_cast<double>(success.size());
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

EpochRow evaluate_epoch(const Model& model, const ParamSet& params, const TrainConfig& cfg, const ImageDataset& train,
                        const ImageDataset& test, const EvalSubsets& subsets, int epoch) {
    EpochRow row;
    row.epoch = epoch;
    const double eps = cfg.eps;
    const AttackSpec pgd_spec = eval_pgd_spec(cfg, eps);

    {
        const Array x = train.gather(subsets.train_idx);
        const auto y = train.gather_labels(subsets.train_idx);
        const auto pred = predict(model, params, x);
        std::int64_t ok = 0;
        for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i];
        row.train_clean_acc = static_cast<double>(ok) / static_cast<double>(y.size());
        const AttackResult f = fgsm(model, params, x, y, eps, cfg.box_clip);
        const AttackResult p = run_attack(model, params, x, y, pgd_spec);
        row.train_fgsm_acc = frac_correct(f.success);
        row.train_pgd_acc = frac_correct(p.success);
        const double fl = mean_of(f.loss);
        row.pgd_fgsm_loss_ratio = fl > 0.0 ? mean_of(p.loss) / fl : kNaN;
    }
    {
        row.test_clean_acc = accuracy(model, params, test);
        const Array x = test.gather(subsets.test_idx);
        const auto y = test.gather_labels(subsets.test_idx);
        const AttackResult p = run_attack(model, params, x, y, pgd_spec);
        const AttackResult f = fgsm(model, params, x, y, eps, cfg.box_clip);
        row.test_pgd_acc = frac_correct(p.success);
        row.cos_fgsm_pgd = mean_row_cosine(f.delta, p.delta);

        const std::int64_t na = std::min<std::int64_t>(cfg.align_points, static_cast<std::int64_t>(y.size()));
        std::vector<std::int64_t> first(subsets.test_idx.begin(), subsets.test_idx.begin() + na);
        const auto ya = test.gather_labels(first);
        row.grad_alignment =
            gradient_alignment(model, params, test.gather(first), ya, eps, cfg.align_eta, derive_seed(cfg.seed, stream::eval))
                .mean;
    }
    return row;
}

StepNoise step_noise(std::uint64_t seed, int epoch, std::size_t batch, int replay) {
    const std::uint64_t tag = (static_cast<std::uint64_t>(epoch) << 40) ^ (static_cast<std::uint64_t>(batch) << 8) ^
                              static_cast<std::uint64_t>(replay);
    return {derive_seed(derive_seed(seed, stream::attack), tag), derive_seed(derive_seed(seed, stream::penalty), tag)};
}

Array method_delta(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                   const MethodSpec& method, double eps, bool box_clip, std::uint64_t attack_seed) {
    const double alpha = method.alpha_factor() * eps;
    switch (method.kind) {
        case TrainMethod::standard: return Array(x.shape, 0.0);
        case TrainMethod::fgsm_at:
        case TrainMethod::fgsm_gradalign:
        case TrainMethod::fgsm_gradnorm:
        case TrainMethod::fgsm_cure: return fgsm(model, params, x, y, eps, box_clip, alpha).delta;
        case TrainMethod::fgsm_rs_at: return fgsm_rs(model, params, x, y, eps, alpha, attack_seed, box_clip).delta;
        case TrainMethod::pgd_at:
        case TrainMethod::pgd_gradalign:
        case TrainMethod::pgd_corner_at: {
            AttackSpec s{method.kind == TrainMethod::pgd_corner_at ? AttackMethod::pgd_corner : AttackMethod::pgd,
                         eps, alpha, method.steps, 1, AttackInit::zero, box_clip, attack_seed};
            return run_attack(model, params, x, y, s).delta;
        }
        case TrainMethod::free_at: throw std::logic_error("free_at perturbations are produced by its replay loop");
    }
    throw std::logic_error("unknown method");
}

Objective method_objective(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                           const Array& delta, const MethodSpec& method, double eps, bool box_clip,
                           std::uint64_t penalty_seed, bool want_grads) {
    const bool penalized = method.has_penalty() && method.lambda > 0.0;
    Graph g(penalized ? GradMode::higher_order : GradMode::first_order);
    BoundParams p = bind(g, params, true);
    Array xd = x;
    for (std::size_t i = 0; i < xd.data.size(); ++i) xd.data[i] += delta.data[i];
    Var ce = loss(model, p, g.constant(std::move(xd)), y);
    Var total = ce;
    Objective out;
    out.stats.ce = ce.value().item();
    if (penalized) {
        Var omega;
        switch (method.kind) {
            case TrainMethod::fgsm_gradalign:
            case TrainMethod::pgd_gradalign: {
                Rng rng(penalty_seed);
                omega = grad_align_penalty(g, model, p, x, y, eps, rng, box_clip, method.stop_grad_second_arg);
                break;
            }
            case TrainMethod::fgsm_gradnorm: omega = grad_norm_penalty(g, model, p, x, y); break;
            case TrainMethod::fgsm_cure: omega = cure_penalty(g, model, p, x, y, delta); break;
            default: throw std::logic_error("method has no penalty");
        }
        out.stats.omega = omega.value().item();
        total = add(ce, scale(omega, method.lambda));
    }
    out.stats.total = total.value().item();
    if (want_grads) out.grads = g.gradients(total, p.vars);
    return out;
}

TrainResult train(const TrainConfig& cfg, const ImageDataset& train_ds, const ImageDataset& test_ds,
                  const TrainHooks& hooks, std::optional<TrainState> resume) {
    cfg.validate();
    train_ds.validate();
    test_ds.validate();
    const auto model = make_model(cfg.model);
    const Shape want = model->input_shape(1);
    if (train_ds.channels != want[1] || train_ds.side != want[2]) {
        throw std::invalid_argument("dataset geometry does not match model.channels/model.side");
    }

    TrainState st;
    if (resume) {
        st = std::move(*resume);
        model->check_params(st.params);
    } else {
        st.params = init_params(*model, cfg.init, cfg.seed);
    }
    Optimizer opt(cfg.optimizer, st.params);
    if (resume && st.optimizer_state.size() > 0) opt.load_state(st.optimizer_state);

    BatchPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.seed = cfg.seed;
    plan.augment = cfg.augment;
    const std::int64_t n_batches = static_cast<std::int64_t>(plan.batches(train_ds.size(), 0).size());
    const int epochs = cfg.effective_epochs();
    const int replay = cfg.method.kind == TrainMethod::free_at ? cfg.method.replay : 1;
    const std::int64_t total_steps = static_cast<std::int64_t>(epochs) * n_batches * replay;
    ScheduleSpec sched = cfg.schedule;
    const EvalSubsets subsets = eval_subsets(cfg, train_ds, test_ds);

    TrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return st.elapsed_s + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    for (int epoch = st.epochs_done; epoch < epochs; ++epoch) {
        const double eps_e =
            cfg.eps_warmup_epochs > 0 ? cfg.eps * std::min(1.0, (epoch + 1.0) / cfg.eps_warmup_epochs) : cfg.eps;
        double loss_sum = 0, omega_sum = 0;
        std::int64_t loss_n = 0, omega_n = 0;
        double lr = 0;
        const auto batches = plan.batches(train_ds.size(), epoch);
        ParamSet before;
        try {
            for (std::size_t b = 0; b < batches.size(); ++b) {
                const Array x = plan.materialize(train_ds, batches[b], epoch, b);
                const auto y = train_ds.gather_labels(batches[b]);
                if (cfg.method.kind == TrainMethod::free_at) {
                    Array delta(x.shape, 0.0);
                    for (int r = 0; r < replay; ++r) {
                        Graph g;
                        BoundParams p = bind(g, st.params, true);
                        Array xd = x;
                        for (std::size_t i = 0; i < xd.data.size(); ++i) xd.data[i] += delta.data[i];
                        Var xv = g.variable(std::move(xd));
                        Var l = loss(*model, p, xv, y);
                        std::vector<Var> wrt = p.vars;
                        wrt.push_back(xv);
                        auto grads = g.gradients(l, wrt);
                        const Array gx = std::move(grads.back());
                        grads.pop_back();
                        lr = sched.lr(st.global_step + 1, total_steps);
                        before = st.params;
                        opt.step(st.params, grads, lr);
                        ++st.global_step;
                        for (std::size_t i = 0; i < delta.data.size(); ++i) {
                            delta.data[i] += eps_e * (gx.data[i] > 0 ? 1.0 : (gx.data[i] < 0 ? -1.0 : 0.0));
                        }
                        project(delta.data, x.data, eps_e, cfg.box_clip);
                        loss_sum += l.value().item();
                        ++loss_n;
                        for (const auto& e : st.params)
                            if (!all_finite(e.value.values())) throw NumericFault("non-finite parameter '" + e.name + "'");
                    }
                    continue;
                }
                const StepNoise noise = step_noise(cfg.seed, epoch, b);
                const Array delta = method_delta(*model, st.params, x, y, cfg.method, eps_e, cfg.box_clip, noise.attack_seed);
                const Objective obj =
                    method_objective(*model, st.params, x, y, delta, cfg.method, eps_e, cfg.box_clip, noise.penalty_seed);
                lr = sched.lr(st.global_step + 1, total_steps);
                before = st.params;
                opt.step(st.params, obj.grads, lr);
                ++st.global_step;
                for (const auto& e : st.params)
                    if (!all_finite(e.value.values())) throw NumericFault("non-finite parameter '" + e.name + "'");
                loss_sum += obj.stats.total;
                ++loss_n;
                if (!std::isnan(obj.stats.omega)) {
                    omega_sum += obj.stats.omega;
                    ++omega_n;
                }
            }
        } catch (const NumericFault& e) {
            bool finite = true;
            for (const auto& p : st.params) finite = finite && all_finite(p.value.values());
            if (!finite && before.size() > 0) st.params = before;
            res.diverged = true;
            res.divergence_message = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
            break;
        }

        EpochRow row;
        const bool evaluate = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == epochs;
        if (evaluate) row = evaluate_epoch(*model, st.params, cfg, train_ds, test_ds, subsets, epoch + 1);
        row.epoch = epoch + 1;
        row.lr = lr;
        row.train_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : kNaN;
        row.omega_value = omega_n ? omega_sum / static_cast<double>(omega_n) : kNaN;
        row.wallclock_s = elapsed();
        st.log.rows.push_back(row);
        if (evaluate && row.train_pgd_acc > st.best_pgd_acc) {
            st.best_pgd_acc = row.train_pgd_acc;
            st.best_params = st.params;
            st.best_epoch = row.epoch;
        }
        st.epochs_done = epoch + 1;
        st.optimizer_state = opt.state();
        res.history.push_back(st.params);
        if (hooks.on_epoch) hooks.on_epoch(st);
    }

    res.final_params = st.params;
    res.log = st.log;
    if (cfg.early_stop && st.best_params.size() > 0) {
        res.best_params = st.best_params;
        res.best_epoch = st.best_epoch;
    } else {
        res.best_params = st.params;
        res.best_epoch = st.epochs_done;
    }
    return res;
}

}  // namespace coat
