#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "coat/checkpoint.hpp"
#include "coat/plots.hpp"
#include "coat/run_registry.hpp"
#include "coat/verification.hpp"

namespace fs = std::filesystem;
using namespace coat;

namespace {

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(p.string() + ": cannot write");
    out << text;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& sets,
                              const std::optional<std::uint64_t>& seed) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    for (const auto& s : sets) apply_override(cfg, s);
    if (seed) cfg.train.seed = *seed;
    cfg.validate();
    return cfg;
}

void log_line(const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); }

void print_checks(const std::string& suite, const std::vector<Check>& checks) {
    for (const auto& c : checks)
        std::printf("%-8s %-28s %s  %s\n", suite.c_str(), c.name.c_str(), c.passed ? "PASS" : "FAIL", c.detail.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coat: adversarial training, catastrophic overfitting and gradient alignment experiments"};
    app.require_subcommand(1);

    std::string config_path, out_root = "runs";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    bool force = false;
    int workers = 1;

    auto* train = app.add_subcommand("train", "train one config into a run directory");
    train->add_option("--config", config_path, "TOML config")->required();
    train->add_option("--set", sets, "override key=value (repeatable)");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--out", out_root, "runs root directory");
    train->add_flag("--force", force, "overwrite an existing complete run");

    std::string ckpt, attack = "pgd", eps_text, alpha_text, split = "test", eval_out;
    int steps = 50, restarts = 10;
    std::int64_t points = 1000;
    auto* eval = app.add_subcommand("eval", "clean and adversarial accuracy of a checkpoint");
    eval->add_option("checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--attack", attack, "fgsm | fgsm_rs | pgd | pgd_corner");
    eval->add_option("--eps", eps_text, "radius, e.g. 8/255 (default: the run's eps)");
    eval->add_option("--alpha", alpha_text, "step size (default eps/4 for pgd, eps for fgsm)");
    eval->add_option("--steps", steps, "attack iterations");
    eval->add_option("--restarts", restarts, "random restarts");
    eval->add_option("--points", points, "adversarial subsample size");
    eval->add_option("--split", split, "test | train");
    eval->add_option("--set", sets, "override the checkpoint's config (dataset keys)");
    eval->add_option("--seed", seed, "attack and subsample seed");
    eval->add_option("--out", eval_out, "write the JSON report here");

    std::string param = "eps", values, seeds_text = "0";
    auto* sweep = app.add_subcommand("sweep", "one run per value per seed, with a summary table");
    sweep->add_option("--config", config_path, "template config")->required();
    sweep->add_option("--param", param, "eps | lambda | alpha");
    sweep->add_option("--values", values, "comma-separated values")->required();
    sweep->add_option("--seeds", seeds_text, "comma-separated seeds");
    sweep->add_option("--set", sets, "override key=value (repeatable)");
    sweep->add_option("--workers", workers, "concurrent runs");
    sweep->add_option("--out", out_root, "runs root directory");
    sweep->add_flag("--force", force, "overwrite existing complete runs");

    std::string which = "all", report_dir = "reports";
    int cases = 100, n_mc = 1000;
    auto* verify = app.add_subcommand("verify", "theory and finite-difference verification suites");
    verify->add_option("which", which, "lemma1 | lemma2 | autodiff | all");
    verify->add_option("--out", report_dir, "directory for CSV reports");
    verify->add_option("--seed", seed, "seed");
    verify->add_option("--cases", cases, "randomized cases per autodiff suite");
    verify->add_option("--mc", n_mc, "Monte Carlo samples");

    bool as_json = false;
    auto* list = app.add_subcommand("list", "runs found under the runs root");
    list->add_option("--out", out_root, "runs root directory");
    list->add_flag("--json", as_json, "print run records as JSON");

    std::string plots_dir = "plots", plots_which = "all";
    std::int64_t lin_points = 512;
    auto* plots = app.add_subcommand("export-plots", "plot-ready CSV files from the run registry");
    plots->add_option("--out", out_root, "runs root directory");
    plots->add_option("--dest", plots_dir, "output directory");
    plots->add_option("--which", plots_which,
                      "all | alignment_vs_epoch | weight_norms | linearization_error | robustness_vs_eps");
    plots->add_option("--points", lin_points, "examples for the linearization sweep");

    CLI11_PARSE(app, argc, argv);

    try {
        RunOptions opts;
        opts.root = out_root;
        opts.force = force;
        opts.data_dir = data_dir_from_env();
        opts.log = log_line;

        if (*train) {
            const ExperimentConfig cfg = build_config(config_path, sets, seed);
            const RunRecord rec = run_experiment(cfg, opts);
            std::printf("%s\n", rec.to_json().dump(2).c_str());
            return rec.status == RunStatus::complete ? 0 : 1;
        }

        if (*eval) {
            ExperimentConfig cfg = config_from_checkpoint(ckpt);
            for (const auto& s : sets) apply_override(cfg, s);
            cfg.validate();
            const TrainConfig tc = cfg.resolved();
            const double eps = eps_text.empty() ? tc.eps : Quantity::parse(eps_text).value();
            const std::uint64_t s = seed.value_or(derive_seed(tc.seed, stream::attack));
            AttackSpec spec = AttackSpec::pgd_50_10(eps, s);
            spec.method = parse_attack_method(attack);
            spec.steps = steps;
            spec.restarts = restarts;
            spec.box_clip = tc.box_clip;
            if (spec.method == AttackMethod::fgsm) spec.alpha = eps;
            if (spec.method == AttackMethod::fgsm_rs) spec.alpha = 1.25 * eps;
            if (!alpha_text.empty()) spec.alpha = Quantity::parse(alpha_text).value();
            spec.validate();
            const CifarPair data = load_experiment_data(cfg, opts.data_dir);
            if (split != "test" && split != "train") throw std::invalid_argument("--split: expected test or train");
            const auto report = evaluate_checkpoint(ckpt, spec, split == "test" ? data.test : data.train, points, s);
            const std::string text = report.dump(2) + "\n";
            if (!eval_out.empty()) write_file(eval_out, text);
            std::printf("%s", text.c_str());
            return 0;
        }

        if (*sweep) {
            SweepSpec spec;
            spec.base = build_config(config_path, sets, std::nullopt);
            spec.parameter = parse_sweep_parameter(param);
            spec.values = split_list(values);
            spec.seeds.clear();
            for (const auto& v : split_list(seeds_text)) spec.seeds.push_back(std::stoull(v));
            spec.workers = workers;
            const SweepResult res = run_sweep(spec, opts);
            const fs::path dir = fs::path(out_root) / "sweeps";
            const std::string tag = spec.base.name + "_" + param;
            write_file(dir / (tag + "_summary.csv"), res.summary_csv());
            write_file(dir / (tag + "_runs.csv"), res.runs_csv());
            std::printf("%s", res.summary_csv().c_str());
            int failed = 0;
            for (const auto& r : res.runs) failed += r.status == "failed";
            if (failed) std::fprintf(stderr, "%d of %zu child runs failed\n", failed, res.runs.size());
            return failed ? 1 : 0;
        }

        if (*verify) {
            if (which != "lemma1" && which != "lemma2" && which != "autodiff" && which != "all") {
                throw std::invalid_argument("verify: expected lemma1 | lemma2 | autodiff | all");
            }
            const std::uint64_t s = seed.value_or(0);
            bool ok = true;
            fs::create_directories(report_dir);
            if (which == "lemma1" || which == "all") {
                const auto r = verify_lemma1(8.0 / 255.0, 3072, {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0}, n_mc, s);
                write_file(fs::path(report_dir) / "lemma1.csv", r.report.to_csv());
                print_checks("lemma1", r.checks);
                ok = ok && all_passed(r.checks);
            }
            if (which == "lemma2" || which == "all") {
                Lemma2Setup st;
                st.n_mc = n_mc;
                const auto r = verify_lemma2(st, s);
                write_file(fs::path(report_dir) / "lemma2.csv", r.to_csv());
                print_checks("lemma2", r.checks);
                ok = ok && all_passed(r.checks);
            }
            if (which == "autodiff" || which == "all") {
                std::vector<Check> checks;
                for (const auto& suite : verify_autodiff(cases, s)) checks.push_back(suite.as_check());
                print_checks("autodiff", checks);
                ok = ok && all_passed(checks);
            }
            std::printf("verify %s: %s\n", which.c_str(), ok ? "PASS" : "FAIL");
            return ok ? 0 : 1;
        }

        if (*list) {
            const auto runs = list_runs(out_root);
            if (as_json) {
                nlohmann::json j = nlohmann::json::array();
                for (const auto& r : runs) j.push_back(r.to_json());
                std::printf("%s\n", j.dump(2).c_str());
            } else {
                std::printf("%-12s  %-20s  %-9s  %6s  %4s  %s\n", "run", "name", "status", "epochs", "co", "dir");
                for (const auto& r : runs) {
                    std::printf("%-12s  %-20s  %-9s  %6d  %4s  %s\n", r.id.substr(0, 12).c_str(), r.name.c_str(),
                                to_string(r.status).c_str(), r.epochs_done,
                                r.co_epoch ? std::to_string(*r.co_epoch).c_str() : "-", r.dir.string().c_str());
                }
            }
            for (const auto& p : orphan_artifacts(out_root))
                std::fprintf(stderr, "unreferenced artifact: %s\n", p.string().c_str());
            return 0;
        }

        if (*plots) {
            const auto runs = list_runs(out_root);
            const bool all = plots_which == "all";
            const fs::path dest = plots_dir;
            bool any = false;
            if (all || plots_which == "alignment_vs_epoch") {
                write_file(dest / "alignment_vs_epoch.csv", alignment_vs_epoch_csv(runs));
                any = true;
            }
            if (all || plots_which == "weight_norms") {
                write_file(dest / "weight_norms.csv", weight_norms_csv(runs));
                any = true;
            }
            if (all || plots_which == "robustness_vs_eps") {
                write_file(dest / "robustness_vs_eps.csv", robustness_vs_eps_csv(runs));
                any = true;
            }
            if (all || plots_which == "linearization_error") {
                const std::vector<double> fr{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
                write_file(dest / "linearization_error.csv", linearization_error_csv(runs, opts.data_dir, lin_points, fr));
                any = true;
            }
            if (!any) throw std::invalid_argument("export-plots: unknown --which '" + plots_which + "'");
            std::printf("wrote %s\n", dest.string().c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
