#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coat/datasets.hpp"
#include "coat/models.hpp"

namespace coat {

enum class AttackMethod { fgsm, fgsm_rs, pgd, pgd_corner };
enum class AttackInit { zero, uniform_ball };

std::string to_string(AttackMethod m);
std::string to_string(AttackInit i);
AttackMethod parse_attack_method(const std::string& s);
AttackInit parse_attack_init(const std::string& s);

struct AttackSpec {
    AttackMethod method = AttackMethod::pgd;
    double eps = 8.0 / 255.0;
    double alpha = 2.0 / 255.0;
    int steps = 10;
    int restarts = 1;
    AttackInit init = AttackInit::zero;
    bool box_clip = true;
    std::uint64_t seed = 0;

    /// 50 steps, 10 restarts, alpha = eps/4, uniform-ball init (restart 0 is the zero start).
    static AttackSpec pgd_50_10(double eps, std::uint64_t seed = 0);
    static AttackSpec fgsm_spec(double eps);

    void validate() const;
    nlohmann::json to_json() const;
    static AttackSpec from_json(const nlohmann::json& j);
};

struct AttackResult {
    Array delta;               // same shape as x
    std::vector<double> loss;  // per-example loss at x + delta
    std::vector<bool> success; // misclassified under some restart
    int iterations = 0;        // gradient evaluations per example

    nlohmann::json to_json() const;  // per-example loss, success, l2, linf
};

struct InputGrad {
    Array grad;                // d(sum of per-example losses)/dx, i.e. per-example input gradients
    std::vector<double> loss;  // per-example loss
    std::vector<int> pred;
};

/// One forward/backward at x with parameters held constant.
InputGrad input_gradient(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y);
/// Per-example loss and predictions without gradient.
InputGrad evaluate_point(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y);

/// delta = eps * sign(grad), or step * sign(grad) when a reduced step is given.
AttackResult fgsm(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, double eps,
                  bool box_clip, std::optional<double> step = std::nullopt);
AttackResult fgsm_rs(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, double eps,
                     double alpha, std::uint64_t seed, bool box_clip);
AttackResult pgd(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                 const AttackSpec& spec);
AttackResult pgd_corner(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                        const AttackSpec& spec);
AttackResult run_attack(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y,
                        const AttackSpec& spec);

/// Projects delta onto the eps-ball and, with box_clip, makes x + delta lie in [0,1]^d.
void project(std::span<double> delta, std::span<const double> x, double eps, bool box_clip);
/// Uniform draw from [-eps, eps]^d.
void uniform_ball(std::span<double> out, double eps, Rng& rng);

struct RobustnessReport {
    double clean_acc = 0.0;         // full dataset
    double adv_acc = 0.0;           // subsample
    double subset_clean_acc = 0.0;  // clean accuracy on the same subsample
    std::int64_t n_clean = 0;
    std::int64_t n_adv = 0;
    AttackSpec spec;
    std::uint64_t subsample_seed = 0;

    nlohmann::json to_json() const;
};

/// Clean accuracy over the full set; adversarial accuracy over a fixed
/// n_adv-point subsample. An example is robust only if it is clean-correct and
/// no restart misclassifies it.
RobustnessReport evaluate_robustness(const Model& model, const ParamSet& params, const ImageDataset& ds,
                                     const AttackSpec& spec, std::int64_t n_adv = 1000,
                                     std::uint64_t subsample_seed = 0, std::int64_t batch = 250);

double accuracy(const Model& model, const ParamSet& params, const ImageDataset& ds, std::int64_t batch = 500);

}  // namespace coat
