#include "coat/metric_log.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace coat {

namespace {

struct Column {
    const char* name;
    double EpochRow::*field;
};

const std::vector<Column>& columns() {
    static const std::vector<Column> cols{
        {"lr", &EpochRow::lr},
        {"train_loss", &EpochRow::train_loss},
        {"train_clean_acc", &EpochRow::train_clean_acc},
        {"train_fgsm_acc", &EpochRow::train_fgsm_acc},
        {"train_pgd_acc", &EpochRow::train_pgd_acc},
        {"test_clean_acc", &EpochRow::test_clean_acc},
        {"test_pgd_acc", &EpochRow::test_pgd_acc},
        {"grad_alignment", &EpochRow::grad_alignment},
        {"cos_fgsm_pgd", &EpochRow::cos_fgsm_pgd},
        {"omega_value", &EpochRow::omega_value},
        {"wallclock_s", &EpochRow::wallclock_s},
        {"pgd_fgsm_loss_ratio", &EpochRow::pgd_fgsm_loss_ratio},
    };
    return cols;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_num(const std::string& s) {
    if (s == "nan") return kNaN;
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad numeric field '" + s + "'");
    return v;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

}  // namespace

const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n{"epoch"};
        for (const auto& c : columns()) n.emplace_back(c.name);
        return n;
    }();
    return names;
}

bool EpochRow::same_metrics(const EpochRow& o) const {
    if (epoch != o.epoch) return false;
    for (const auto& c : columns()) {
        if (c.field == &EpochRow::wallclock_s) continue;
        if (!same(this->*c.field, o.*c.field)) return false;
    }
    return true;
}

std::string MetricLog::header() const {
    std::string h;
    for (const auto& n : metric_columns()) h += (h.empty() ? "" : ",") + n;
    return h;
}

std::string MetricLog::format_row(const EpochRow& r) {
    std::string line = std::to_string(r.epoch);
    for (const auto& c : columns()) line += "," + fmt(r.*c.field);
    return line;
}

std::string MetricLog::to_csv() const {
    std::string out = header() + "\n";
    for (const auto& r : rows) out += format_row(r) + "\n";
    return out;
}

MetricLog MetricLog::from_csv(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw std::invalid_argument("metrics CSV is empty");
    const auto head = split(line);
    if (head != metric_columns()) {
        throw std::invalid_argument("metrics CSV schema mismatch: expected columns '" + MetricLog{}.header() +
                                    "', got '" + line + "'");
    }
    MetricLog log;
    int lineno = 1;
    while (std::getline(ss, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != head.size()) {
            throw std::invalid_argument("metrics CSV line " + std::to_string(lineno) + " has " +
                                        std::to_string(f.size()) + " fields, expected " + std::to_string(head.size()));
        }
        EpochRow r;
        r.epoch = std::stoi(f[0]);
        for (std::size_t i = 0; i < columns().size(); ++i) r.*columns()[i].field = parse_num(f[i + 1]);
        log.rows.push_back(r);
    }
    return log;
}

MetricLog MetricLog::load(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return from_csv(ss.str());
}

void MetricLog::save(const std::filesystem::path& p) const {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << to_csv();
}

bool MetricLog::same_metrics(const MetricLog& o) const {
    if (rows.size() != o.rows.size()) return false;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (!rows[i].same_metrics(o.rows[i])) return false;
    return true;
}

MetricWriter::MetricWriter(std::filesystem::path path, bool append) : path_(std::move(path)) {
    if (append && std::filesystem::exists(path_)) {
        MetricLog::load(path_);  // validates the schema of what is already there
        return;
    }
    std::ofstream os(path_, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path_.string());
    os << MetricLog{}.header() << "\n" << std::flush;
}

void MetricWriter::write(const EpochRow& r) {
    std::ofstream os(path_, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to " + path_.string());
    os << MetricLog::format_row(r) << "\n" << std::flush;
}

}  // namespace coat
