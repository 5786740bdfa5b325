#include "coat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "coat/ops.hpp"

namespace coat {

double stable_cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("stable_cosine: length mismatch");
    double num = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 1.0;
    const double c = num / std::sqrt(std::max(na * nb, kCosineFloor * kCosineFloor));
    return std::clamp(c, -1.0, 1.0);
}

namespace {

std::vector<double> row_cosines(const Array& a, const Array& b) {
    if (a.shape != b.shape) throw ShapeError("row cosine: " + to_string(a.shape) + " vs " + to_string(b.shape));
    const std::int64_t n = a.shape.at(0);
    const std::int64_t d = n ? a.size() / n : 0;
    std::vector<double> out(n);
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = stable_cosine(std::span<const double>(a.data).subspan(i * d, d),
                               std::span<const double>(b.data).subspan(i * d, d));
    }
    return out;
}

std::pair<double, double> mean_se(const std::vector<double>& v) {
    if (v.empty()) return {kNaN, kNaN};
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) return {m, 0.0};
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / (n - 1.0) / n)};
}

void append_alignment(const Model& model, const ParamSet& params, const Array& x, std::span<const int> y, double eps,
                      int n_eta, Rng& rng, bool box_clip, std::vector<double>& out) {
    const Array g0 = input_gradient(model, params, x, y).grad;
    for (int k = 0; k < n_eta; ++k) {
        Array xe = x;
        Array eta(x.shape);
        uniform_ball(eta.data, eps, rng);
        for (std::size_t i = 0; i < xe.data.size(); ++i) {
            xe.data[i] += eta.data[i];
            if (box_clip) xe.data[i] = std::clamp(xe.data[i], 0.0, 1.0);
        }
        const auto c = row_cosines(g0, input_gradient(model, params, xe, y).grad);
        out.insert(out.end(), c.begin(), c.end());
    }
}

AlignmentEstimate finish(const std::vector<double>& cos, double eps) {
    auto [m, se] = mean_se(cos);
    return AlignmentEstimate{m, se, static_cast<std::int64_t>(cos.size()), eps};
}

}  // namespace

double mean_row_cosine(const Array& a, const Array& b) {
    const auto c = row_cosines(a, b);
    return mean_se(c).first;
}

AlignmentEstimate gradient_alignment(const Model& model, const ParamSet& params, const Array& x,
                                     std::span<const int> y, double eps, int n_eta, std::uint64_t seed,
                                     bool box_clip) {
    if (n_eta < 1) throw std::invalid_argument("gradient_alignment: n_eta must be >= 1");
    Rng rng = make_rng(seed, stream::analysis);
    std::vector<double> cos;
    append_alignment(model, params, x, y, eps, n_eta, rng, box_clip, cos);
    return finish(cos, eps);
}

AlignmentEstimate gradient_alignment(const Model& model, const ParamSet& params, const ImageDataset& ds, double eps,
                                     std::int64_t n_points, int n_eta, std::uint64_t seed, bool box_clip,
                                     std::int64_t batch) {
    if (n_eta < 1) throw std::invalid_argument("gradient_alignment: n_eta must be >= 1");
    const auto idx = subsample_indices(ds.size(), n_points, seed);
    Rng rng = make_rng(seed, stream::analysis);
    std::vector<double> cos;
    for (std::int64_t s = 0; s < n_points; s += batch) {
        std::span<const std::int64_t> part(idx.data() + s, static_cast<std::size_t>(std::min(batch, n_points - s)));
        const auto y = ds.gather_labels(part);
        append_alignment(model, params, ds.gather(part), y, eps, n_eta, rng, box_clip, cos);
    }
    return finish(cos, eps);
}

double attack_direction_cosine(const Model& model, const ParamSet& params, const ImageDataset& ds, double eps,
                               std::uint64_t seed, std::int64_t n_points, std::optional<AttackSpec> pgd_spec) {
    const AttackSpec spec = pgd_spec.value_or(AttackSpec::pgd_50_10(eps, seed));
    const auto idx = subsample_indices(ds.size(), std::min(n_points, ds.size()), seed);
    const Array x = ds.gather(idx);
    const auto y = ds.gather_labels(idx);
    const AttackResult f = fgsm(model, params, x, y, eps, spec.box_clip);
    const AttackResult p = run_attack(model, params, x, y, spec);
    return mean_row_cosine(f.delta, p.delta);
}

std::vector<double> linear_approx_error(const Model& model, const ParamSet& params, const Array& x,
                                        std::span<const int> y, const Array& delta) {
    if (delta.shape != x.shape) throw ShapeError("linear_approx_error: delta " + to_string(delta.shape) + " vs x " + to_string(x.shape));
    const InputGrad at = input_gradient(model, params, x, y);
    Array xd = x;
    for (std::size_t i = 0; i < xd.data.size(); ++i) xd.data[i] += delta.data[i];
    const InputGrad moved = evaluate_point(model, params, xd, y);
    const std::size_t n = y.size();
    const std::size_t d = n ? x.data.size() / n : 0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lin = 0;
        for (std::size_t j = 0; j < d; ++j) lin += delta.data[i * d + j] * at.grad.data[i * d + j];
        out[i] = std::abs(moved.loss[i] - at.loss[i] - lin);
    }
    return out;
}

std::vector<LinearizationPoint> linearization_sweep(const Model& model, const ParamSet& params, const ImageDataset& ds,
                                                    double eps, std::span<const double> fractions,
                                                    std::int64_t n_points, std::uint64_t seed, CornerSource source) {
    const auto idx = subsample_indices(ds.size(), std::min(n_points, ds.size()), seed);
    const Array x = ds.gather(idx);
    const auto y = ds.gather_labels(idx);
    Rng rng = make_rng(seed, stream::analysis);
    Array corner(x.shape);
    if (source == CornerSource::fgsm) {
        corner = fgsm(model, params, x, y, eps, false).delta;
        for (double& v : corner.data)
            if (v == 0.0) v = eps;
    } else {
        std::bernoulli_distribution coin(0.5);
        for (double& v : corner.data) v = coin(rng) ? eps : -eps;
    }
    const std::size_t n = y.size();
    const std::size_t d = n ? x.data.size() / n : 0;
    std::vector<LinearizationPoint> out;
    for (double frac : fractions) {
        if (!(frac >= 0.0 && frac <= 1.0)) throw std::invalid_argument("linearization_sweep: fraction outside [0,1]");
        Array delta = corner;
        const auto keep = static_cast<std::size_t>(std::llround(frac * static_cast<double>(d)));
        std::vector<std::size_t> order(d);
        std::vector<double> l2(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t j = keep; j < d; ++j) delta.data[i * d + order[j]] = 0.0;
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += delta.data[i * d + j] * delta.data[i * d + j];
            l2[i] = std::sqrt(s);
        }
        const auto err = linear_approx_error(model, params, x, y, delta);
        auto [m, se] = mean_se(err);
        out.push_back({frac, mean_se(l2).first, m, se});
    }
    return out;
}

namespace {
std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}
}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

namespace {

std::span<const double> filter_weights(const SingleLayerCNN& model, const ParamSet& p, int i) {
    const Array& w = p.at("conv.weight");
    const std::size_t per = w.data.size() / static_cast<std::size_t>(model.spec().filters);
    return std::span<const double>(w.data).subspan(i * per, per);
}

double outgoing_norm(const SingleLayerCNN& model, const ParamSet& p, int i) {
    const Array& u = p.at("fc.weight");
    const std::int64_t row = model.positions() * model.num_classes();
    double s = 0;
    for (std::int64_t j = i * row; j < (i + 1) * row; ++j) s += u.data[j] * u.data[j];
    return std::sqrt(s);
}

double norm(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

std::vector<FilterStat> filter_stats(const SingleLayerCNN& model, const std::vector<ParamSet>& history) {
    if (history.empty()) throw std::invalid_argument("filter_stats: empty history");
    std::vector<FilterStat> out;
    for (std::size_t e = 0; e < history.size(); ++e) {
        model.check_params(history[e]);
        for (int i = 0; i < model.spec().filters; ++i) {
            out.push_back({static_cast<int>(e), i, norm(filter_weights(model, history[e], i)),
                           outgoing_norm(model, history[e], i),
                           stable_cosine(filter_weights(model, history[e], i), filter_weights(model, history[0], i))});
        }
    }
    return out;
}

int max_norm_filter(const SingleLayerCNN& model, const ParamSet& params) {
    int best = 0;
    double best_norm = -1;
    for (int i = 0; i < model.spec().filters; ++i) {
        const double n = norm(filter_weights(model, params, i));
        if (n > best_norm) {
            best_norm = n;
            best = i;
        }
    }
    return best;
}

std::vector<double> noise_amplification(const SingleLayerCNN& model, const ParamSet& params, const Array& x,
                                        const Array& eta) {
    if (eta.shape != x.shape) throw ShapeError("noise_amplification: eta " + to_string(eta.shape) + " vs x " + to_string(x.shape));
    Graph g;
    Var w = g.constant(params.at("conv.weight"));
    Var clean = conv2d(g.constant(x), w, model.spec().stride, model.spec().pad);
    Array xe = x;
    for (std::size_t i = 0; i < xe.data.size(); ++i) xe.data[i] += eta.data[i];
    Var noisy = conv2d(g.constant(xe), w, model.spec().stride, model.spec().pad);
    const Shape& s = clean.shape();
    const std::int64_t n = s[0], m = s[1], plane = s[2] * s[3];
    std::vector<double> out(m);
    for (std::int64_t f = 0; f < m; ++f) {
        double num = 0, den = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < plane; ++j) {
                const std::int64_t k = (i * m + f) * plane + j;
                const double c = clean.value().data[k];
                const double dlt = noisy.value().data[k] - c;
                num += dlt * dlt;
                den += c * c;
            }
        }
        out[f] = den == 0.0 ? std::numeric_limits<double>::infinity() : std::sqrt(num) / std::sqrt(den);
    }
    return out;
}

std::vector<double> noise_amplification(const SingleLayerCNN& model, const ParamSet& params, const Array& x,
                                        double eps, std::uint64_t seed) {
    Rng rng = make_rng(seed, stream::analysis);
    Array eta(x.shape);
    uniform_ball(eta.data, eps, rng);
    return noise_amplification(model, params, x, eta);
}

std::optional<COEvent> detect_co(const MetricLog& log, const COThresholds& t) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        const auto& r = log.rows[i];
        if (!std::isnan(r.train_pgd_acc) && !std::isnan(r.train_fgsm_acc) && !std::isnan(r.grad_alignment)) {
            usable.push_back(i);
        }
    }
    if (usable.size() < 2) {
        throw std::invalid_argument("detect_co: need at least 2 epochs with train_pgd_acc, train_fgsm_acc and grad_alignment");
    }
    for (std::size_t k = 1; k < usable.size(); ++k) {
        const auto& a = log.rows[usable[k - 1]];
        const auto& b = log.rows[usable[k]];
        // Accuracies are ratios of counts; the slack absorbs rounding in the differences.
        constexpr double slack = 1e-12;
        if (a.train_pgd_acc - b.train_pgd_acc >= t.pgd_drop - slack &&
            b.train_fgsm_acc - a.train_fgsm_acc >= t.fgsm_rise - slack &&
            b.grad_alignment < t.align_ratio * a.grad_alignment) {
            return COEvent{b.epoch,          a.train_pgd_acc,  b.train_pgd_acc, a.train_fgsm_acc, b.train_fgsm_acc,
                           a.grad_alignment, b.grad_alignment, usable[k]};
        }
    }
    return std::nullopt;
}

}  // namespace coat
