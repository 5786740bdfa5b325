#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coat/theory.hpp"

namespace coat {

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Outcome of a finite-difference suite over randomized cases.
struct FdSuite {
    std::string name;
    double tol = 0;
    int cases = 0;
    int failed = 0;
    int redraws = 0;  // cases re-drawn because a preactivation sat too close to a kink
    double worst_rel = 0;
    std::vector<std::string> failures;

    bool ok() const { return cases > 0 && failed == 0; }
    Check as_check() const;
};

/// |a - b| / max(|a|, |b|, floor). The floor keeps gradients that are zero up
/// to rounding from reporting huge relative errors.
double relative_error(double a, double b, double floor = 1e-6);

inline constexpr double kFdStep = 1e-5;
inline constexpr double kKinkMargin = 1e-6;

/// Reverse-mode gradients against central differences, cycling through every
/// differentiable op plus the three model families.
FdSuite verify_first_order(int n_cases, std::uint64_t seed, double tol = 1e-4);

enum class PenaltyKind { grad_align, grad_norm, cure };
std::string to_string(PenaltyKind k);

/// Parameter gradients of a penalty via double backpropagation against
/// central differences of the penalty value.
FdSuite verify_second_order(PenaltyKind kind, int n_cases, std::uint64_t seed, double tol = 1e-3);

std::vector<FdSuite> verify_autodiff(int n_cases, std::uint64_t seed);

struct Lemma1Checks {
    Lemma1Report report;
    std::vector<Check> checks;
};

/// Jensen direction, exactness of the second moment, sign-pattern invariance,
/// and the value at alpha = 1.25 eps when that point is on the grid.
Lemma1Checks verify_lemma1(double eps, std::int64_t d, const std::vector<double>& alpha_over_eps, int n_mc,
                           std::uint64_t seed);

struct Lemma2Checks {
    Lemma2Report bound;
    std::vector<Lemma2Empirical> empirical;  // one per grid point
    std::vector<Check> checks;
    std::string to_csv() const;
};

struct Lemma2Setup {
    int p = 27;
    int k = 100;
    int m = 4;
    double sigma_w = 1.0;
    double sigma_u = 1.0;
    int n_mc = 1000;
    int n_trials = 200;
    int n_limit = 100000;
    std::vector<double> eps_grid = linspace(0.0, 0.1, 21);
    double band_low = 0.7;  // reported band for the final bound on this grid
};

Lemma2Checks verify_lemma2(const Lemma2Setup& setup, std::uint64_t seed);

bool all_passed(const std::vector<Check>& checks);

}  // namespace coat
