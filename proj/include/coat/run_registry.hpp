#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coat/config.hpp"

namespace coat {

/// Raised when a dataset is not available on disk.
class DataUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// COAT_DATA_DIR, or nullopt when unset.
std::optional<std::filesystem::path> data_dir_from_env();

/// Train/test splits for a config. CIFAR-10 is read from `data_dir`.
CifarPair load_experiment_data(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& data_dir);

enum class RunStatus { running, complete, diverged, failed };
std::string to_string(RunStatus s);
RunStatus parse_run_status(const std::string& s);

struct RunRecord {
    std::string id;
    std::string name;
    RunStatus status = RunStatus::running;
    std::filesystem::path dir;
    std::string config;  // canonical TOML
    int epochs_done = 0;
    int best_epoch = -1;
    std::optional<int> co_epoch;
    std::string message;
    /// Every file in the run directory other than run.json, by role.
    std::map<std::string, std::string> artifacts;
    nlohmann::json final_eval = nlohmann::json::object();

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j, const std::filesystem::path& dir);
};

struct RunOptions {
    std::filesystem::path root = "runs";
    bool force = false;
    /// Return an existing complete or diverged run instead of refusing it.
    bool reuse_complete = false;
    std::optional<std::filesystem::path> data_dir;
    std::function<void(const std::string&)> log;
};

/// Trains one config into root/<run id>. An existing complete run is refused
/// unless force is set; an incomplete one is resumed from its last checkpoint.
RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

RunRecord load_run(const std::filesystem::path& dir);
/// Every run directory under root, rebuilt from run.json files.
std::vector<RunRecord> list_runs(const std::filesystem::path& root);
/// Files under root that no run record references; sweep summaries in
/// root/sweeps are not run artifacts and are skipped.
std::vector<std::filesystem::path> orphan_artifacts(const std::filesystem::path& root);

/// The experiment config stored in a checkpoint's metadata.
ExperimentConfig config_from_checkpoint(const std::filesystem::path& ckpt);

/// Clean and adversarial accuracy of a checkpoint; the report records the
/// attack seed and subsample seed.
nlohmann::json evaluate_checkpoint(const std::filesystem::path& ckpt, const AttackSpec& spec, const ImageDataset& ds,
                                   std::int64_t n_points, std::uint64_t subsample_seed);

enum class SweepParameter { eps, lambda, alpha };
SweepParameter parse_sweep_parameter(const std::string& s);
std::string to_string(SweepParameter p);
std::string sweep_key(SweepParameter p);

struct SweepSpec {
    ExperimentConfig base;
    SweepParameter parameter = SweepParameter::eps;
    std::vector<std::string> values;
    std::vector<std::uint64_t> seeds{0};
    int workers = 1;
};

struct SweepRun {
    std::string value;
    std::uint64_t seed = 0;
    std::string id;
    std::string status;  // complete | diverged | failed
    std::string error;
    double final_test_pgd = kNaN;
    double final_test_clean = kNaN;
    double eval_adv_acc = kNaN;  // final_eval on the final parameters
    double eval_clean_acc = kNaN;
    bool co = false;
};

struct SweepRow {
    std::string value;
    int runs = 0;
    int failed = 0;
    int co_events = 0;
    double pgd_mean = kNaN, pgd_std = kNaN;
    double clean_mean = kNaN, clean_std = kNaN;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::vector<SweepRow> rows;
    std::string summary_csv() const;
    std::string runs_csv() const;
};

/// One run per (value, seed) on a bounded worker pool. Finished runs are
/// reused; a failing child is recorded and the sweep continues.
SweepResult run_sweep(const SweepSpec& spec, const RunOptions& opts);

}  // namespace coat
