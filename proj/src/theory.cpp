#include "coat/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "coat/analysis.hpp"
#include "coat/rng.hpp"

namespace coat {

namespace {

struct Moments {
    double sum = 0, sq = 0;
    std::int64_t n = 0;
    void add(double v) {
        sum += v;
        sq += v * v;
        ++n;
    }
    double mean() const { return sum / static_cast<double>(n); }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = std::max(0.0, (sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
        return std::sqrt(var / static_cast<double>(n));
    }
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void check_alpha(double eps, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 2.0 * eps)) throw std::invalid_argument("alpha must lie in [0, 2*eps]");
}

}  // namespace

std::vector<double> linspace(double a, double b, int n) {
    if (n < 2) return {a};
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

double lemma1_second_moment(double eps, double alpha, std::int64_t d) {
    check_alpha(eps, alpha);
    return static_cast<double>(d) * (-alpha * alpha * alpha / (6.0 * eps) + alpha * alpha / 2.0 + eps * eps / 3.0);
}

double lemma1_bound(double eps, double alpha, std::int64_t d) { return std::sqrt(lemma1_second_moment(eps, alpha, d)); }

Lemma1Report lemma1_verify(double eps, std::int64_t d, std::span<const double> alpha_grid, int n_mc,
                           std::uint64_t seed) {
    if (!(eps > 0.0)) throw std::invalid_argument("lemma1: eps must be > 0");
    if (d < 1) throw std::invalid_argument("lemma1: d must be >= 1");
    if (n_mc < 100) throw std::invalid_argument("lemma1: n_mc must be >= 100");
    for (double a : alpha_grid) check_alpha(eps, a);

    Rng rng = make_rng(seed, stream::analysis);
    std::vector<double> pattern_b(d);
    std::bernoulli_distribution coin(0.5);
    for (double& s : pattern_b) s = coin(rng) ? 1.0 : -1.0;

    const std::size_t na = alpha_grid.size();
    std::vector<Moments> norm_a(na), sq_a(na), norm_b(na);
    std::uniform_real_distribution<double> u(-eps, eps);
    std::vector<double> eta(d);
    std::vector<double> acc_a(na), acc_b(na);
    for (int t = 0; t < n_mc; ++t) {
        for (double& e : eta) e = u(rng);
        std::fill(acc_a.begin(), acc_a.end(), 0.0);
        std::fill(acc_b.begin(), acc_b.end(), 0.0);
        for (std::int64_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < na; ++k) {
                const double a = std::clamp(eta[i] + alpha_grid[k], -eps, eps);
                const double b = std::clamp(eta[i] + alpha_grid[k] * pattern_b[i], -eps, eps);
                acc_a[k] += a * a;
                acc_b[k] += b * b;
            }
        }
        for (std::size_t k = 0; k < na; ++k) {
            norm_a[k].add(std::sqrt(acc_a[k]));
            sq_a[k].add(acc_a[k]);
            norm_b[k].add(std::sqrt(acc_b[k]));
        }
    }

    Lemma1Report rep{eps, d, n_mc, {}};
    for (std::size_t k = 0; k < na; ++k) {
        Lemma1Row r;
        r.alpha = alpha_grid[k];
        r.second_moment = lemma1_second_moment(eps, r.alpha, d);
        r.bound = std::sqrt(r.second_moment);
        r.mc_mean = norm_a[k].mean();
        r.mc_se = norm_a[k].se();
        r.mc_sq_mean = sq_a[k].mean();
        r.mc_sq_se = sq_a[k].se();
        r.mc_mean_b = norm_b[k].mean();
        r.mc_se_b = norm_b[k].se();
        r.jensen_gap = r.bound - r.mc_mean;
        rep.rows.push_back(r);
    }
    return rep;
}

std::string Lemma1Report::to_csv() const {
    std::string out = "eps,d,alpha,alpha_over_eps,bound,second_moment,mc_mean,mc_se,mc_sq_mean,mc_sq_se,mc_mean_b,mc_se_b,jensen_gap\n";
    for (const auto& r : rows) {
        out += num(eps) + "," + std::to_string(d) + "," + num(r.alpha) + "," + num(r.alpha / eps) + "," + num(r.bound) +
               "," + num(r.second_moment) + "," + num(r.mc_mean) + "," + num(r.mc_se) + "," + num(r.mc_sq_mean) + "," +
               num(r.mc_sq_se) + "," + num(r.mc_mean_b) + "," + num(r.mc_se_b) + "," + num(r.jensen_gap) + "\n";
    }
    return out;
}

Lemma2Report lemma2_bound(std::span<const double> eps_grid, int p, int n_mc, std::uint64_t seed, double sigma_w) {
    if (p < 2) throw std::invalid_argument("lemma2: p must be >= 2");
    if (n_mc < 2) throw std::invalid_argument("lemma2: n_mc must be >= 2");
    if (!(sigma_w > 0.0)) throw std::invalid_argument("lemma2: sigma_w must be > 0");
    for (double e : eps_grid)
        if (!(e >= 0.0)) throw std::invalid_argument("lemma2: eps must be >= 0");

    Rng rng = make_rng(seed, stream::analysis);
    std::normal_distribution<double> nd(0.0, sigma_w);
    std::uniform_real_distribution<double> uz(0.0, 1.0);
    std::vector<double> t(n_mc), wsq(n_mc);  // <w/|w|, z> and |w|^2
    std::vector<double> w(p);
    for (int s = 0; s < n_mc; ++s) {
        double nn = 0;
        for (double& v : w) {
            v = nd(rng);
            nn += v * v;
        }
        double dot = 0;
        for (int i = 0; i < p; ++i) dot += w[i] * uz(rng);
        t[s] = dot / std::sqrt(nn);
        wsq[s] = nn;
    }

    Lemma2Report rep{p, n_mc, sigma_w, {}};
    const double scale = static_cast<double>(p) * sigma_w * sigma_w;
    for (double eps : eps_grid) {
        Moments e_final, e_hoeff;
        for (int s = 0; s < n_mc; ++s) {
            const double t2 = t[s] * t[s];
            if (eps == 0.0) {
                e_final.add(t2 == 0.0 ? 1.0 : 0.0);
                e_hoeff.add(t2 == 0.0 ? wsq[s] : 0.0);
            } else {
                e_final.add(std::exp(-t2 / (eps * eps)));
                e_hoeff.add(wsq[s] * std::exp(-t2 / (2.0 * eps * eps)));
            }
        }
        Lemma2Row r;
        r.eps = eps;
        r.expectation = e_final.mean();
        r.expectation_se = e_final.se();
        const double raw_final = 1.0 - std::sqrt(2.0) * std::sqrt(r.expectation);
        r.final_bound = std::max(raw_final, 0.5);
        // d/dE of 1 - sqrt(2E) is -1/sqrt(2E); zero once the 0.5 floor is active.
        r.bound_se = raw_final > 0.5 && r.expectation > 0.0 ? r.expectation_se / std::sqrt(2.0 * r.expectation) : 0.0;
        const double raw_h = 1.0 - e_hoeff.mean() / scale;
        r.hoeffding_clipped = raw_h > 1.0;
        r.hoeffding_bound = std::clamp(raw_h, 0.5, 1.0);
        rep.rows.push_back(r);
    }
    return rep;
}

std::string Lemma2Report::to_csv() const {
    std::string out = "p,eps,expectation,expectation_se,final_bound,bound_se,hoeffding_bound,hoeffding_clipped\n";
    for (const auto& r : rows) {
        out += std::to_string(p) + "," + num(r.eps) + "," + num(r.expectation) + "," + num(r.expectation_se) + "," +
               num(r.final_bound) + "," + num(r.bound_se) + "," + num(r.hoeffding_bound) + "," +
               (r.hoeffding_clipped ? "1" : "0") + "\n";
    }
    return out;
}

Lemma2Empirical lemma2_empirical(double eps, int p, int k, int m, double sigma_w, double sigma_u, int n_trials,
                                 std::uint64_t seed, int n_limit) {
    if (p < 2 || k < 1 || m < 1 || n_trials < 1) throw std::invalid_argument("lemma2_empirical: invalid dimensions");
    if (!(sigma_w > 0.0 && sigma_u > 0.0)) throw std::invalid_argument("lemma2_empirical: sigmas must be > 0");
    if (!(eps >= 0.0)) throw std::invalid_argument("lemma2_empirical: eps must be >= 0");
    Rng rng = make_rng(seed, stream::analysis);
    std::normal_distribution<double> nw(0.0, sigma_w), nu(0.0, sigma_u);
    std::uniform_real_distribution<double> uz(0.0, 1.0);
    std::uniform_real_distribution<double> ue(-eps, eps);

    Lemma2Empirical out;
    out.eps = eps;
    std::vector<double> W(m * p), U(m * k), z(k * p), ze(k * p), g0(k * p), g1(k * p);
    Moments cos;
    for (int t = 0; t < n_trials; ++t) {
        for (double& v : W) v = nw(rng);
        for (double& v : U) v = nu(rng);
        for (double& v : z) v = uz(rng);
        for (std::size_t i = 0; i < z.size(); ++i) ze[i] = z[i] + (eps > 0.0 ? ue(rng) : 0.0);
        std::fill(g0.begin(), g0.end(), 0.0);
        std::fill(g1.begin(), g1.end(), 0.0);
        for (int j = 0; j < k; ++j) {
            for (int i = 0; i < m; ++i) {
                double a0 = 0, a1 = 0;
                for (int q = 0; q < p; ++q) {
                    a0 += W[i * p + q] * z[j * p + q];
                    a1 += W[i * p + q] * ze[j * p + q];
                }
                const double u = U[i * k + j];
                for (int q = 0; q < p; ++q) {
                    if (a0 >= 0.0) g0[j * p + q] += u * W[i * p + q];
                    if (a1 >= 0.0) g1[j * p + q] += u * W[i * p + q];
                }
            }
        }
        const double c = stable_cosine(g0, g1);
        out.cosines.push_back(c);
        cos.add(c);
    }
    out.mean = cos.mean();
    out.se = cos.se();

    // Ratio of expectations, with a batch-means standard error.
    constexpr int kBatches = 20;
    const int per = std::max(1, n_limit / kBatches);
    double num_all = 0, d0_all = 0, d1_all = 0;
    Moments ratio_batches;
    std::vector<double> w(p);
    for (int b = 0; b < kBatches; ++b) {
        double nb = 0, d0 = 0, d1 = 0;
        for (int s = 0; s < per; ++s) {
            double nn = 0, a0 = 0, a1 = 0;
            for (int q = 0; q < p; ++q) {
                w[q] = nw(rng);
                nn += w[q] * w[q];
                const double zq = uz(rng);
                a0 += w[q] * zq;
                a1 += w[q] * (zq + (eps > 0.0 ? ue(rng) : 0.0));
            }
            if (a0 >= 0.0) d0 += nn;
            if (a1 >= 0.0) d1 += nn;
            if (a0 >= 0.0 && a1 >= 0.0) nb += nn;
        }
        num_all += nb;
        d0_all += d0;
        d1_all += d1;
        ratio_batches.add(nb / std::sqrt(d0 * d1));
    }
    out.limiting = num_all / std::sqrt(d0_all * d1_all);
    out.limiting_se = ratio_batches.se();
    return out;
}

}  // namespace coat
