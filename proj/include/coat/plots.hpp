#pragma once

#include <string>
#include <vector>

#include "coat/run_registry.hpp"

namespace coat {

/// Per-epoch alignment and robustness columns of every run.
std::string alignment_vs_epoch_csv(const std::vector<RunRecord>& runs);
/// Filter and outgoing-weight norms per epoch checkpoint (single-layer CNN runs only).
std::string weight_norms_csv(const std::vector<RunRecord>& runs);
/// Linear-approximation error against |delta|_2 on each run's final checkpoint.
std::string linearization_error_csv(const std::vector<RunRecord>& runs,
                                    const std::optional<std::filesystem::path>& data_dir, std::int64_t n_points,
                                    const std::vector<double>& fractions);
/// Final-evaluation robustness of every run against its training eps.
std::string robustness_vs_eps_csv(const std::vector<RunRecord>& runs);

}  // namespace coat
