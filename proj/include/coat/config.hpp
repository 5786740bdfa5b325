#pragma once

#include <map>
#include <string>
#include <vector>

#include "coat/trainer.hpp"

namespace coat {

/// Field-level configuration error; the message starts with the key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A number written either as a decimal or as an exact ratio "k/255". The
/// text is kept verbatim so the canonical form (and the run id) never drifts.
struct Quantity {
    std::string text = "8/255";

    static Quantity parse(const std::string& s);  // throws std::invalid_argument
    double value() const;
    bool is_ratio() const { return text.find('/') != std::string::npos; }

    friend bool operator==(const Quantity&, const Quantity&) = default;
};

struct DatasetConfig {
    std::string name = "cifar10";  // cifar10 | synthetic
    std::int64_t train_size = 0;   // 0 keeps the full split
    std::int64_t test_size = 0;
    std::uint64_t seed = 0;  // subsampling and synthetic generation
    SyntheticSpec synthetic;
    std::int64_t synthetic_test_n = 200;
};

struct FinalEvalConfig {
    bool enabled = true;
    std::int64_t points = 1000;
    int steps = 50;
    int restarts = 10;

    friend bool operator==(const FinalEvalConfig&, const FinalEvalConfig&) = default;
};

struct ExperimentConfig {
    std::string name = "run";
    DatasetConfig data;
    Quantity eps;
    TrainConfig train;  // train.eps is derived from `eps`
    FinalEvalConfig final_eval;

    /// TrainConfig with eps and the dataset-dependent model dimensions filled in.
    TrainConfig resolved() const;
    /// Field-level validation of everything, including the resolved TrainConfig.
    void validate() const;

    /// Equal canonical serializations.
    friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

/// All accepted dotted keys, sorted.
std::vector<std::string> config_keys();

ExperimentConfig parse_config(const std::string& toml_text);
ExperimentConfig load_config(const std::string& path);

/// `key=value`; the value is read as a TOML value, falling back to a bare string.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// Canonical TOML: every key, sorted, shortest round-trip number formatting.
std::string serialize_config(const ExperimentConfig& cfg);

/// SHA-256 hex digest of the canonical serialization.
std::string run_id(const ExperimentConfig& cfg);
std::string sha256_hex(const std::string& bytes);

}  // namespace coat
