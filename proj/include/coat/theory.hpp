#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace coat {

/// Exact E|delta|_2^2 of an FGSM-RS perturbation: d(-a^3/(6e) + a^2/2 + e^2/3).
double lemma1_second_moment(double eps, double alpha, std::int64_t d);
/// sqrt of the second moment; an upper bound on E|delta|_2 by Jensen.
double lemma1_bound(double eps, double alpha, std::int64_t d);

struct Lemma1Row {
    double alpha = 0;
    double bound = 0;
    double second_moment = 0;
    double mc_mean = 0;  // E|delta|_2, sign pattern A
    double mc_se = 0;
    double mc_sq_mean = 0;  // E|delta|_2^2, pattern A
    double mc_sq_se = 0;
    double mc_mean_b = 0;  // E|delta|_2, sign pattern B
    double mc_se_b = 0;
    double jensen_gap = 0;  // bound - mc_mean
};

struct Lemma1Report {
    double eps = 0;
    std::int64_t d = 0;
    int n_mc = 0;
    std::vector<Lemma1Row> rows;
    std::string to_csv() const;
};

/// Monte Carlo of |clamp(eta + alpha*s, -eps, eps)|_2 with eta ~ U([-eps,eps]^d)
/// for two fixed sign patterns s (all +1, and a random one).
Lemma1Report lemma1_verify(double eps, std::int64_t d, std::span<const double> alpha_grid, int n_mc,
                           std::uint64_t seed);

struct Lemma2Row {
    double eps = 0;
    double expectation = 0;  // E[exp(-<w/|w|, z>^2 / eps^2)]
    double expectation_se = 0;
    double final_bound = 0;
    double hoeffding_bound = 0;
    bool hoeffding_clipped = false;  // raw value exceeded 1
    double bound_se = 0;             // delta-method standard error of final_bound
};

struct Lemma2Report {
    int p = 0;
    int n_mc = 0;
    double sigma_w = 1.0;
    std::vector<Lemma2Row> rows;
    std::string to_csv() const;
};

/// Both lower bounds, with the same (w, z) draws reused across the grid so the
/// estimates are monotone in eps. w ~ N(0, sigma_w^2 I_p), z ~ U([0,1]^p).
Lemma2Report lemma2_bound(std::span<const double> eps_grid, int p, int n_mc, std::uint64_t seed, double sigma_w = 1.0);

struct Lemma2Empirical {
    double eps = 0;
    std::vector<double> cosines;  // one per trial
    double mean = 0;
    double se = 0;
    double limiting = 0;  // decoupled ratio of expectations
    double limiting_se = 0;
};

/// Single-output CNN on k non-overlapping patches of size p:
/// grad f = sum_{i,j} u_ij 1[<w_i, z_j> >= 0] w_i e_j^T, b = 0. Samples the
/// cosine of the gradients at z and z + eta, and evaluates the k,m -> infinity
/// ratio of expectations by Monte Carlo with n_limit draws.
Lemma2Empirical lemma2_empirical(double eps, int p, int k, int m, double sigma_w, double sigma_u, int n_trials,
                                 std::uint64_t seed, int n_limit = 100000);

std::vector<double> linspace(double a, double b, int n);

}  // namespace coat
