#pragma once

#include <optional>
#include <span>
#include <vector>

#include "coat/attacks.hpp"
#include "coat/metric_log.hpp"

namespace coat {

/// Cosine with the engine's stabilizer: denominator max(|a||b|, 1e-10), and 1
/// when both vectors are exactly zero. Clamped to [-1, 1].
double stable_cosine(std::span<const double> a, std::span<const double> b);
/// Mean over rows of stable_cosine for two [N, ...] arrays.
double mean_row_cosine(const Array& a, const Array& b);

struct AlignmentEstimate {
    double mean = 0.0;
    double se = 0.0;
    std::int64_t count = 0;
    double eps = 0.0;
};

/// Mean cosine between input gradients at x and at x + eta, eta ~ U([-eps,eps]^d),
/// over n_points examples x n_eta draws.
AlignmentEstimate gradient_alignment(const Model& model, const ParamSet& params, const ImageDataset& ds, double eps,
                                     std::int64_t n_points, int n_eta, std::uint64_t seed, bool box_clip = false,
                                     std::int64_t batch = 256);
/// Same on an explicit batch.
AlignmentEstimate gradient_alignment(const Model& model, const ParamSet& params, const Array& x,
                                     std::span<const int> y, double eps, int n_eta, std::uint64_t seed,
                                     bool box_clip = false);

/// Mean cosine between FGSM and PGD perturbations on a subsample.
double attack_direction_cosine(const Model& model, const ParamSet& params, const ImageDataset& ds, double eps,
                               std::uint64_t seed, std::int64_t n_points = 1000,
                               std::optional<AttackSpec> pgd_spec = std::nullopt);

/// |l(x+delta) - l(x) - <delta, grad l(x)>| per example.
std::vector<double> linear_approx_error(const Model& model, const ParamSet& params, const Array& x,
                                        std::span<const int> y, const Array& delta);

enum class CornerSource { fgsm, random };

struct LinearizationPoint {
    double fraction = 0.0;  // retained coordinates
    double mean_l2 = 0.0;   // mean |delta|_2
    double mean_error = 0.0;
    double se = 0.0;
};

/// Corner perturbations with a random (1 - fraction) of coordinates zeroed.
std::vector<LinearizationPoint> linearization_sweep(const Model& model, const ParamSet& params, const ImageDataset& ds,
                                                    double eps, std::span<const double> fractions,
                                                    std::int64_t n_points, std::uint64_t seed,
                                                    CornerSource source = CornerSource::fgsm);

double spearman(std::span<const double> a, std::span<const double> b);

struct FilterStat {
    int epoch = 0;
    int filter = 0;
    double w_norm = 0.0;
    double u_norm = 0.0;       // Frobenius norm of the filter's outgoing fc rows
    double cos_to_first = 1.0; // direction cosine with the first snapshot
};

std::vector<FilterStat> filter_stats(const SingleLayerCNN& model, const std::vector<ParamSet>& history);
/// Index of the filter with the largest |w_i|.
int max_norm_filter(const SingleLayerCNN& model, const ParamSet& params);

/// Per filter |(x+eta)*w_i - x*w_i|_2 / |x*w_i|_2 over the batch, without bias;
/// +inf when the clean response is zero.
std::vector<double> noise_amplification(const SingleLayerCNN& model, const ParamSet& params, const Array& x,
                                        double eps, std::uint64_t seed);
/// Same with a given eta.
std::vector<double> noise_amplification(const SingleLayerCNN& model, const ParamSet& params, const Array& x,
                                        const Array& eta);

struct COThresholds {
    double pgd_drop = 0.20;
    double fgsm_rise = 0.10;
    double align_ratio = 0.5;
};

struct COEvent {
    int epoch = 0;
    double pgd_before = 0, pgd_after = 0;
    double fgsm_before = 0, fgsm_after = 0;
    double align_before = 0, align_after = 0;
    std::size_t row = 0;  // index into the log
};

/// Earliest row where, against the previous evaluated row, train PGD accuracy
/// drops by >= pgd_drop, train FGSM accuracy rises by >= fgsm_rise and
/// alignment falls below align_ratio times its previous value. Rows with a NaN
/// in any of the three are skipped; fewer than two usable rows is an error.
std::optional<COEvent> detect_co(const MetricLog& log, const COThresholds& t = {});

}  // namespace coat
