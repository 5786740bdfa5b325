#include <gtest/gtest.h>

#include <cmath>

#include "coat/penalties.hpp"
#include "coat/trainer.hpp"
#include "coat/verification.hpp"
#include "helpers.hpp"

using namespace coat;

namespace {

struct Split {
    ImageDataset train, test;
};

Split synthetic_split(std::int64_t n_train, std::int64_t n_test, int classes = 3, std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.n = n_train + n_test;
    s.num_classes = classes;
    s.image_side = 8;
    s.seed = seed;
    const ImageDataset all = make_synthetic(s);
    std::vector<std::int64_t> a, b;
    for (std::int64_t i = 0; i < s.n; ++i) (i < n_train ? a : b).push_back(i);
    Split out{all.select(a), all.select(b)};
    out.train.split = "train";
    out.test.split = "test";
    return out;
}

TrainConfig small_config(TrainMethod method, int classes = 3) {
    TrainConfig c;
    c.model.kind = ModelKind::single_layer_cnn;
    c.model.channels = 3;
    c.model.side = 8;
    c.model.num_classes = classes;
    c.model.filters = 4;
    c.method.kind = method;
    c.eps = 8.0 / 255.0;
    c.optimizer.lr = 0.01;
    c.schedule.max_lr = 0.01;
    c.epochs = 3;
    c.batch_size = 32;
    c.seed = 5;
    c.eval_train_points = 48;
    c.eval_test_points = 32;
    c.eval_pgd_steps = 3;
    c.align_points = 16;
    return c;
}

bool same_params(const std::vector<ParamSet>& a, const std::vector<ParamSet>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i] == b[i])) return false;
    return true;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].value.data.size(); ++j)
            m = std::max(m, std::abs(a[i].value.data[j] - b[i].value.data[j]));
    return m;
}

testutil::QuadraticToy linear_toy(const Array& w) {
    return testutil::QuadraticToy(static_cast<int>(w.size()), w, Array(w.shape, 0.0), Array(w.shape, 0.0));
}

}  // namespace

TEST(Train, StandardFitsSeparableData) {
    const Split d = synthetic_split(150, 30);
    TrainConfig c = small_config(TrainMethod::standard);
    c.epochs = 10;
    const TrainResult r = train(c, d.train, d.test);
    const auto model = make_model(c.model);
    EXPECT_GE(accuracy(*model, r.final_params, d.train), 0.99);
    EXPECT_EQ(r.log.rows.size(), 10u);
    EXPECT_FALSE(r.diverged);
}

TEST(Train, GradAlignWithZeroLambdaIsFgsmBitForBit) {
    const Split d = synthetic_split(96, 32);
    TrainConfig a = small_config(TrainMethod::fgsm_at);
    TrainConfig b = small_config(TrainMethod::fgsm_gradalign);
    b.method.lambda = 0.0;
    const TrainResult ra = train(a, d.train, d.test), rb = train(b, d.train, d.test);
    EXPECT_TRUE(same_params(ra.history, rb.history));
    EXPECT_TRUE(ra.log.same_metrics(rb.log));
}

TEST(Train, LoggedLossMatchesRecomputedObjective) {
    const Split d = synthetic_split(64, 32);
    for (TrainMethod m : {TrainMethod::fgsm_gradalign, TrainMethod::fgsm_cure, TrainMethod::fgsm_rs_at, TrainMethod::pgd_at}) {
        TrainConfig c = small_config(m);
        c.batch_size = 64;  // one step per epoch
        c.epochs = 2;
        if (c.method.has_penalty()) c.method.lambda = 0.7;
        c.method.steps = 2;
        const TrainResult r = train(c, d.train, d.test);
        const auto model = make_model(c.model);
        BatchPlan plan;
        plan.batch_size = c.batch_size;
        plan.seed = c.seed;
        std::vector<ParamSet> pre{init_params(*model, c.init, c.seed), r.history[0]};
        for (int epoch = 0; epoch < 2; ++epoch) {
            const auto batches = plan.batches(d.train.size(), epoch);
            ASSERT_EQ(batches.size(), 1u);
            const Array x = plan.materialize(d.train, batches[0], epoch, 0);
            const auto y = d.train.gather_labels(batches[0]);
            const StepNoise noise = step_noise(c.seed, epoch, 0);
            const Array delta = method_delta(*model, pre[epoch], x, y, c.method, c.eps, c.box_clip, noise.attack_seed);
            const Objective o =
                method_objective(*model, pre[epoch], x, y, delta, c.method, c.eps, c.box_clip, noise.penalty_seed, false);
            EXPECT_NEAR(r.log.rows[epoch].train_loss, o.stats.total, 1e-8) << to_string(m) << " epoch " << epoch;
            const double lam = c.method.has_penalty() ? c.method.lambda : 0.0;
            const double omega = std::isnan(o.stats.omega) ? 0.0 : o.stats.omega;
            EXPECT_NEAR(o.stats.total, o.stats.ce + lam * omega, 1e-12);
            // The cross-entropy term is the loss at x + delta.
            const InputGrad at = evaluate_point(*model, pre[epoch], [&] {
                Array xd = x;
                for (std::size_t i = 0; i < xd.data.size(); ++i) xd.data[i] += delta.data[i];
                return xd;
            }(), y);
            double ce = 0;
            for (double v : at.loss) ce += v;
            EXPECT_NEAR(o.stats.ce, ce / static_cast<double>(at.loss.size()), 1e-12);
        }
    }
}

TEST(Schedule, CyclicEndpointsAndPeak) {
    ScheduleSpec s;
    s.max_lr = 0.003;
    s.peak_fraction = 0.4;
    const std::int64_t T = 1000;
    EXPECT_EQ(s.lr(0, T), 0.0);
    EXPECT_NEAR(s.lr(T, T), 0.0, 1e-18);
    EXPECT_DOUBLE_EQ(s.lr(400, T), 0.003);
    for (std::int64_t t = 1; t <= 400; ++t) EXPECT_GT(s.lr(t, T), s.lr(t - 1, T));
    for (std::int64_t t = 401; t <= T; ++t) EXPECT_LT(s.lr(t, T), s.lr(t - 1, T));
    EXPECT_DOUBLE_EQ(s.lr(200, T), 0.0015);
    s.kind = ScheduleSpec::Kind::constant;
    EXPECT_EQ(s.lr(0, T), 0.003);
    EXPECT_EQ(s.lr(T, T), 0.003);
}

TEST(Train, EarlyStoppingCheckpointReproducesItsAccuracy) {
    const Split d = synthetic_split(96, 32);
    TrainConfig c = small_config(TrainMethod::fgsm_at);
    c.epochs = 4;
    const TrainResult r = train(c, d.train, d.test);
    ASSERT_GE(r.best_epoch, 1);
    double best = -1;
    for (const auto& row : r.log.rows) best = std::max(best, row.train_pgd_acc);
    const double recorded = r.log.rows[r.best_epoch - 1].train_pgd_acc;
    EXPECT_EQ(recorded, best);
    const auto model = make_model(c.model);
    const EpochRow again = evaluate_epoch(*model, r.best_params, c, d.train, d.test, eval_subsets(c, d.train, d.test), r.best_epoch);
    EXPECT_EQ(again.train_pgd_acc, recorded);
    EXPECT_EQ(r.best_params, r.history[r.best_epoch - 1]);
}

TEST(Train, SeedDeterminism) {
    const Split d = synthetic_split(64, 32);
    TrainConfig c = small_config(TrainMethod::fgsm_gradalign);
    c.method.lambda = 0.3;
    c.augment = Augment::crop_flip;
    const TrainResult a = train(c, d.train, d.test), b = train(c, d.train, d.test);
    EXPECT_TRUE(a.log.same_metrics(b.log));
    EXPECT_EQ(a.final_params, b.final_params);
    c.seed = 6;
    EXPECT_FALSE(train(c, d.train, d.test).final_params == a.final_params);
}

TEST(Train, FreeWithOneReplayIsStandardTraining) {
    const Split d = synthetic_split(64, 32);
    TrainConfig f = small_config(TrainMethod::free_at);
    f.method.replay = 1;
    TrainConfig s = small_config(TrainMethod::standard);
    const TrainResult rf = train(f, d.train, d.test), rs = train(s, d.train, d.test);
    ASSERT_EQ(rf.history.size(), rs.history.size());
    for (std::size_t e = 0; e < rf.history.size(); ++e) EXPECT_LT(max_abs_diff(rf.history[e], rs.history[e]), 1e-12);
}

TEST(Train, FreeStepAccounting) {
    const Split d = synthetic_split(64, 32);
    TrainConfig c = small_config(TrainMethod::free_at);
    c.method.replay = 4;
    c.epochs = 8;
    c.batch_size = 20;  // 4 batches, the last one short
    EXPECT_EQ(c.effective_epochs(), 2);
    std::vector<std::int64_t> steps;
    TrainHooks h;
    h.on_epoch = [&](const TrainState& st) { steps.push_back(st.global_step); };
    const TrainResult r = train(c, d.train, d.test, h);
    EXPECT_EQ(steps, (std::vector<std::int64_t>{16, 32}));
    EXPECT_EQ(r.log.rows.size(), 2u);
}

TEST(Train, DivergenceKeepsFiniteParameters) {
    const Split d = synthetic_split(64, 32);
    TrainConfig c = small_config(TrainMethod::fgsm_at);
    c.optimizer.lr = 1e300;
    c.schedule.kind = ScheduleSpec::Kind::constant;
    c.schedule.max_lr = 1e300;
    const TrainResult r = train(c, d.train, d.test);
    EXPECT_TRUE(r.diverged);
    EXPECT_NE(r.divergence_message.find("epoch 1"), std::string::npos) << r.divergence_message;
    for (const auto& e : r.final_params) EXPECT_TRUE(all_finite(e.value.values())) << e.name;
}

TEST(Train, ResumeEqualsUninterrupted) {
    const Split d = synthetic_split(64, 32);
    TrainConfig c = small_config(TrainMethod::fgsm_gradalign);
    c.method.lambda = 0.5;
    const TrainResult full = train(c, d.train, d.test);
    std::optional<TrainState> saved;
    TrainHooks h;
    h.on_epoch = [&](const TrainState& st) {
        if (st.epochs_done == 1) saved = st;
    };
    train(c, d.train, d.test, h);
    ASSERT_TRUE(saved);
    const TrainResult resumed = train(c, d.train, d.test, {}, saved);
    EXPECT_EQ(resumed.final_params, full.final_params);
    EXPECT_TRUE(resumed.log.same_metrics(full.log));
}

TEST(TrainConfig, FieldLevelValidation) {
    auto message = [](TrainConfig c) {
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    TrainConfig c = small_config(TrainMethod::fgsm_gradalign);
    c.method.lambda = -1;
    EXPECT_EQ(message(c).rfind("method.lambda", 0), 0u) << message(c);
    c = small_config(TrainMethod::fgsm_at);
    c.epochs = 0;
    EXPECT_EQ(message(c).rfind("epochs", 0), 0u) << message(c);
    c = small_config(TrainMethod::fgsm_rs_at);
    c.method.alpha_over_eps = 2.5;
    EXPECT_EQ(message(c).rfind("method.alpha_over_eps", 0), 0u) << message(c);
    c = small_config(TrainMethod::fgsm_at);
    c.optimizer.lr = 0;
    EXPECT_EQ(message(c).rfind("optimizer.lr", 0), 0u) << message(c);
    EXPECT_EQ(message(small_config(TrainMethod::pgd_at)), "");
}

TEST(Penalties, GradAlignVanishesOnLinearLoss) {
    std::mt19937_64 rng(1);
    const auto toy = linear_toy(testutil::random_array({12}, rng));
    const ParamSet params = toy.params();
    const Array x = testutil::uniform_array({5, 12, 1, 1}, rng);
    const std::vector<int> y(5, 0);
    for (int trial = 0; trial < 5; ++trial) {
        Graph g(GradMode::higher_order);
        BoundParams p = bind(g, params, true);
        Rng r(static_cast<std::uint64_t>(trial));
        EXPECT_NEAR(grad_align_penalty(g, toy, p, x, y, 0.1, r, false).value().item(), 0.0, 1e-14);
    }
}

TEST(Penalties, GradAlignVanishesOnBinaryAffineModel) {
    std::mt19937_64 rng(2);
    ModelSpec s;
    s.kind = ModelKind::linear;
    s.channels = 3;
    s.side = 4;
    s.num_classes = 2;
    LinearModel m(s);
    const ParamSet params = init_params(m, InitScheme::kaiming(), 3);
    const Array x = testutil::uniform_array(m.input_shape(6), rng);
    const std::vector<int> y{0, 1, 0, 1, 1, 0};
    Graph g(GradMode::higher_order);
    BoundParams p = bind(g, params, true);
    Rng r(4);
    EXPECT_NEAR(grad_align_penalty(g, m, p, x, y, 0.1, r, true).value().item(), 0.0, 1e-12);
}

TEST(Penalties, GradAlignZeroNoise) {
    std::mt19937_64 rng(3);
    ModelSpec s;
    s.kind = ModelKind::single_layer_cnn;
    s.side = 6;
    s.num_classes = 4;
    SingleLayerCNN m(s);
    const ParamSet params = init_params(m, InitScheme::kaiming(), 1);
    const Array x = testutil::uniform_array(m.input_shape(4), rng);
    const std::vector<int> y{0, 1, 2, 3};
    Graph g(GradMode::higher_order);
    BoundParams p = bind(g, params, true);
    EXPECT_NEAR(grad_align_penalty(g, m, p, x, y, Array(x.shape, 0.0), true).value().item(), 0.0, 1e-14);
}

TEST(Penalties, GradNormOfLinearLossIsSquaredWeightNorm) {
    std::mt19937_64 rng(4);
    const Array w = testutil::random_array({10}, rng);
    const auto toy = linear_toy(w);
    double want = 0;
    for (double v : w.data) want += v * v;
    for (int trial = 0; trial < 3; ++trial) {
        const Array x = testutil::uniform_array({3, 10, 1, 1}, rng);
        Graph g(GradMode::higher_order);
        BoundParams p = bind(g, toy.params(), true);
        EXPECT_NEAR(grad_norm_penalty(g, toy, p, x, std::vector<int>(3, 0)).value().item(), want, 1e-12 * want);
    }
}

TEST(Penalties, GradNormOfConstantModelIsZero) {
    std::mt19937_64 rng(5);
    ModelSpec s;
    s.kind = ModelKind::linear;
    s.channels = 3;
    s.side = 4;
    s.num_classes = 5;
    LinearModel m(s);
    ParamSet params = init_params(m, InitScheme::kaiming(), 3);
    for (double& v : params.data("fc.weight")) v = 0.0;
    const Array x = testutil::uniform_array(m.input_shape(3), rng);
    Graph g(GradMode::higher_order);
    BoundParams p = bind(g, params, true);
    EXPECT_EQ(grad_norm_penalty(g, m, p, x, std::vector<int>{0, 2, 4}).value().item(), 0.0);
}

TEST(Penalties, CureVanishesOnLinearLossAndAtZeroRadius) {
    std::mt19937_64 rng(6);
    const auto toy = linear_toy(testutil::random_array({8}, rng));
    const Array x = testutil::uniform_array({4, 8, 1, 1}, rng);
    const std::vector<int> y(4, 0);
    {
        Graph g(GradMode::higher_order);
        BoundParams p = bind(g, toy.params(), true);
        EXPECT_NEAR(cure_penalty(g, toy, p, x, y, 0.1, false).value().item(), 0.0, 1e-24);
    }
    ModelSpec s;
    s.kind = ModelKind::single_layer_cnn;
    s.side = 6;
    s.num_classes = 4;
    SingleLayerCNN m(s);
    const ParamSet params = init_params(m, InitScheme::kaiming(), 2);
    const Array xc = testutil::uniform_array(m.input_shape(4), rng);
    Graph g(GradMode::higher_order);
    BoundParams p = bind(g, params, true);
    EXPECT_EQ(cure_penalty(g, m, p, xc, std::vector<int>{0, 1, 2, 3}, Array(xc.shape, 0.0)).value().item(), 0.0);
}

TEST(Penalties, InputGradientNodeNeedsHigherOrderGraph) {
    const auto toy = linear_toy(Array({3}, 1.0));
    Graph g(GradMode::first_order);
    BoundParams p = bind(g, toy.params(), true);
    EXPECT_THROW(input_gradient_node(g, toy, p, Array({1, 3, 1, 1}, 0.5), std::vector<int>{0}), ModeError);
}

TEST(Penalties, ParameterGradientsMatchFiniteDifferences) {
    for (PenaltyKind k : {PenaltyKind::grad_align, PenaltyKind::grad_norm, PenaltyKind::cure}) {
        const FdSuite s = verify_second_order(k, 12, 77);
        EXPECT_TRUE(s.ok()) << s.name << " worst " << s.worst_rel;
        EXPECT_EQ(s.cases, 12);
    }
}
