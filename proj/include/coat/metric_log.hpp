#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace coat {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One row per epoch. Accuracies are fractions in [0,1]; NaN marks a value
/// not computed that epoch.
struct EpochRow {
    int epoch = 0;
    double lr = kNaN;
    double train_loss = kNaN;
    double train_clean_acc = kNaN;
    double train_fgsm_acc = kNaN;
    double train_pgd_acc = kNaN;
    double test_clean_acc = kNaN;
    double test_pgd_acc = kNaN;
    double grad_alignment = kNaN;
    double cos_fgsm_pgd = kNaN;
    double omega_value = kNaN;
    double wallclock_s = kNaN;
    double pgd_fgsm_loss_ratio = kNaN;

    /// Field-wise equality treating NaN == NaN; wallclock is ignored.
    bool same_metrics(const EpochRow& o) const;
};

inline constexpr int kMetricsSchemaVersion = 1;
const std::vector<std::string>& metric_columns();

class MetricLog {
public:
    std::vector<EpochRow> rows;

    std::string header() const;
    static std::string format_row(const EpochRow& r);
    std::string to_csv() const;
    /// Rejects any column list other than metric_columns().
    static MetricLog from_csv(const std::string& text);
    static MetricLog load(const std::filesystem::path& p);
    void save(const std::filesystem::path& p) const;

    bool same_metrics(const MetricLog& o) const;
};

/// Appends rows to a CSV file, flushing after each one.
class MetricWriter {
public:
    explicit MetricWriter(std::filesystem::path path, bool append = false);
    void write(const EpochRow& r);

private:
    std::filesystem::path path_;
};

}  // namespace coat
