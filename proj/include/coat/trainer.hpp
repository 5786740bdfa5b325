#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coat/analysis.hpp"
#include "coat/optim.hpp"

namespace coat {

enum class TrainMethod {
    standard,
    fgsm_at,
    fgsm_rs_at,
    pgd_at,
    pgd_corner_at,
    free_at,
    fgsm_gradalign,
    pgd_gradalign,
    fgsm_gradnorm,
    fgsm_cure,
};

std::string to_string(TrainMethod m);
TrainMethod parse_train_method(const std::string& s);

struct MethodSpec {
    TrainMethod kind = TrainMethod::fgsm_at;
    double lambda = 0.0;
    int steps = 10;   // pgd_* methods
    int replay = 8;   // free_at
    bool stop_grad_second_arg = false;
    /// Step size as a multiple of eps; when unset the method default applies
    /// (fgsm 1, fgsm_rs 1.25, pgd 1/2 for 2 steps and 2/steps otherwise, free 1).
    std::optional<double> alpha_over_eps;

    bool has_penalty() const;
    double alpha_factor() const;
};

struct TrainConfig {
    ModelSpec model;
    InitScheme init = InitScheme::kaiming();
    MethodSpec method;
    double eps = 8.0 / 255.0;
    OptimizerSpec optimizer;
    ScheduleSpec schedule;
    int epochs = 30;
    std::int64_t batch_size = 128;
    std::uint64_t seed = 0;
    bool early_stop = true;
    int eval_every = 1;
    int eps_warmup_epochs = 0;
    bool box_clip = true;
    Augment augment = Augment::none;

    // Per-epoch diagnostics.
    std::int64_t eval_train_points = 512;
    std::int64_t eval_test_points = 1000;
    int eval_pgd_steps = 10;
    int eval_pgd_restarts = 1;
    std::int64_t align_points = 512;
    int align_eta = 1;

    /// Field-level messages, e.g. "epochs: must be >= 1".
    void validate() const;
    /// Epochs actually run (free_at divides the budget by the replay count).
    int effective_epochs() const;
};

/// Loss accounting for one optimizer step, evaluated at the pre-step parameters.
struct StepStats {
    double ce = 0.0;
    double omega = kNaN;  // unweighted regularizer value; NaN when not computed
    double total = 0.0;   // ce + lambda * omega
};

/// Everything needed to continue a run after an interruption.
struct TrainState {
    int epochs_done = 0;
    std::int64_t global_step = 0;
    ParamSet params;
    ParamSet optimizer_state;
    ParamSet best_params;
    double best_pgd_acc = -1.0;
    int best_epoch = -1;
    MetricLog log;
    double elapsed_s = 0.0;
};

struct TrainResult {
    ParamSet final_params;
    ParamSet best_params;
    int best_epoch = -1;
    MetricLog log;
    bool diverged = false;
    std::string divergence_message;
    std::vector<ParamSet> history;  // parameters after each epoch
};

struct TrainHooks {
    /// After each epoch's row is written into the state.
    std::function<void(const TrainState&)> on_epoch;
};

/// Evaluation subsets drawn once per run.
struct EvalSubsets {
    std::vector<std::int64_t> train_idx;
    std::vector<std::int64_t> test_idx;
};
EvalSubsets eval_subsets(const TrainConfig& cfg, const ImageDataset& train, const ImageDataset& test);

/// Attack used for per-epoch PGD accuracy: eval_pgd_steps steps, alpha = eps/4.
AttackSpec eval_pgd_spec(const TrainConfig& cfg, double eps);

/// One epoch's diagnostics on fixed subsets (train_loss and lr left unset).
EpochRow evaluate_epoch(const Model& model, const ParamSet& params, const TrainConfig& cfg, const ImageDataset& train,
                        const ImageDataset& test, const EvalSubsets& subsets, int epoch);

TrainResult train(const TrainConfig& cfg, const ImageDataset& train, const ImageDataset& test, const TrainHooks& hooks = {},
                  std::optional<TrainState> resume = std::nullopt);

/// Randomness of one adversarial-training step.
struct StepNoise {
    std::uint64_t attack_seed = 0;
    std::uint64_t penalty_seed = 0;
};
StepNoise step_noise(std::uint64_t seed, int epoch, std::size_t batch, int replay = 0);

/// The adversarial example the method trains on (free_at uses its own loop).
Array method_delta(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                   const MethodSpec& method, double eps, bool box_clip, std::uint64_t attack_seed);

/// Objective value and parameter gradients at (x + delta) for a method.
struct Objective {
    StepStats stats;
    std::vector<Array> grads;
};
Objective method_objective(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                           const Array& delta, const MethodSpec& method, double eps, bool box_clip,
                           std::uint64_t penalty_seed, bool want_grads = true);

}  // namespace coat
