#include "coat/run_registry.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "coat/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coat {

namespace {

void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(p.string() + ": cannot write");
        out << text;
        out.flush();
        if (!out) throw std::runtime_error(p.string() + ": write failed");
    }
    fs::rename(tmp, p);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error(p.string() + ": cannot read");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Exclusive advisory lock on a run directory; released on close or crash.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) {
        fd_ = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
        if (fd_ < 0) throw std::runtime_error(dir.string() + ": cannot open run directory");
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw std::runtime_error(dir.string() + ": run directory is in use by another live run");
        }
    }
    ~DirLock() { ::close(fd_); }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

std::string epoch_name(int e) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", e);
    return buf;
}

json ckpt_meta(const ExperimentConfig& cfg, const std::string& id, const std::string& role, int epoch) {
    return json{{"config", serialize_config(cfg)}, {"run_id", id}, {"role", role}, {"epoch", epoch}};
}

void save_record(const RunRecord& r) { write_text(r.dir / "run.json", r.to_json().dump(2) + "\n"); }

double num_or_nan(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) return kNaN;
    return j[key].get<double>();
}

}  // namespace

std::optional<fs::path> data_dir_from_env() {
    const char* v = std::getenv("COAT_DATA_DIR");
    if (!v || !*v) return std::nullopt;
    return fs::path(v);
}

CifarPair load_experiment_data(const ExperimentConfig& cfg, const std::optional<fs::path>& data_dir) {
    CifarPair out;
    if (cfg.data.name == "synthetic") {
        // One draw so that both splits share the class prototypes.
        SyntheticSpec s = cfg.data.synthetic;
        s.n = cfg.data.synthetic.n + cfg.data.synthetic_test_n;
        s.seed = cfg.data.seed;
        const ImageDataset all = make_synthetic(s);
        std::vector<std::int64_t> tr, te;
        for (std::int64_t i = 0; i < all.size(); ++i) (i < cfg.data.synthetic.n ? tr : te).push_back(i);
        out.train = all.select(tr);
        out.test = all.select(te);
        out.train.split = "train";
        out.test.split = "test";
    } else {
        if (!data_dir) throw DataUnavailable("blocked: CIFAR-10 not found in COAT_DATA_DIR (variable unset)");
        try {
            out = load_cifar10(*data_dir);
        } catch (const std::exception& e) {
            throw DataUnavailable(std::string("blocked: CIFAR-10 not found in COAT_DATA_DIR (") + e.what() + ")");
        }
    }
    if (cfg.data.train_size > 0 && cfg.data.train_size < out.train.size()) {
        out.train = subsample(out.train, cfg.data.train_size, derive_seed(cfg.data.seed, 0));
    }
    if (cfg.data.test_size > 0 && cfg.data.test_size < out.test.size()) {
        out.test = subsample(out.test, cfg.data.test_size, derive_seed(cfg.data.seed, 1));
    }
    return out;
}

std::string to_string(RunStatus s) {
    switch (s) {
        case RunStatus::running: return "running";
        case RunStatus::complete: return "complete";
        case RunStatus::diverged: return "diverged";
        case RunStatus::failed: return "failed";
    }
    return "unknown";
}

RunStatus parse_run_status(const std::string& s) {
    if (s == "running") return RunStatus::running;
    if (s == "complete") return RunStatus::complete;
    if (s == "diverged") return RunStatus::diverged;
    if (s == "failed") return RunStatus::failed;
    throw std::invalid_argument("unknown run status '" + s + "'");
}

json RunRecord::to_json() const {
    json j{{"id", id},
           {"name", name},
           {"status", coat::to_string(status)},
           {"config", config},
           {"epochs_done", epochs_done},
           {"best_epoch", best_epoch},
           {"message", message},
           {"artifacts", artifacts},
           {"final_eval", final_eval}};
    j["co_epoch"] = co_epoch ? json(*co_epoch) : json(nullptr);
    return j;
}

RunRecord RunRecord::from_json(const json& j, const fs::path& dir) {
    RunRecord r;
    r.id = j.at("id").get<std::string>();
    r.name = j.value("name", "");
    r.status = parse_run_status(j.at("status").get<std::string>());
    r.dir = dir;
    r.config = j.at("config").get<std::string>();
    r.epochs_done = j.value("epochs_done", 0);
    r.best_epoch = j.value("best_epoch", -1);
    if (j.contains("co_epoch") && j["co_epoch"].is_number_integer()) r.co_epoch = j["co_epoch"].get<int>();
    r.message = j.value("message", "");
    r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    r.final_eval = j.value("final_eval", json::object());
    return r;
}

RunRecord load_run(const fs::path& dir) { return RunRecord::from_json(json::parse(read_text(dir / "run.json")), dir); }

std::vector<RunRecord> list_runs(const fs::path& root) {
    std::vector<RunRecord> out;
    if (!fs::exists(root)) return out;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / "run.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) out.push_back(load_run(d));
    return out;
}

std::vector<fs::path> orphan_artifacts(const fs::path& root) {
    std::vector<fs::path> out;
    if (!fs::exists(root)) return out;
    std::set<fs::path> referenced;
    for (const auto& r : list_runs(root)) {
        referenced.insert(fs::weakly_canonical(r.dir / "run.json"));
        for (const auto& [_, file] : r.artifacts) referenced.insert(fs::weakly_canonical(r.dir / file));
    }
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        const auto& e = *it;
        if (e.is_directory() && e.path().filename() == "sweeps" && it.depth() == 0) {
            it.disable_recursion_pending();
            continue;
        }
        if (!e.is_regular_file()) continue;
        const fs::path p = fs::weakly_canonical(e.path());
        if (!referenced.count(p)) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

RunRecord run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    auto say = [&](const std::string& m) {
        if (opts.log) opts.log(m);
    };
    const std::string id = run_id(cfg);
    const fs::path dir = opts.root / id;
    const TrainConfig tc = cfg.resolved();

    std::optional<TrainState> resume;
    std::optional<RunRecord> previous;
    if (fs::exists(dir / "run.json")) previous = load_run(dir);
    if (previous && !opts.force && previous->status != RunStatus::running) {
        if (opts.reuse_complete && previous->status != RunStatus::failed) {
            say("reusing " + id + " (" + to_string(previous->status) + ")");
            return *previous;
        }
        throw std::runtime_error("run " + id + " already exists in " + dir.string() + " (use --force to overwrite)");
    }
    if (opts.force && fs::exists(dir)) {
        DirLock probe(dir);  // never delete a directory a live run holds
        fs::remove_all(dir);
        previous.reset();
    }
    const CifarPair data = load_experiment_data(cfg, opts.data_dir);
    fs::create_directories(dir);
    DirLock lock(dir);

    RunRecord rec;
    rec.id = id;
    rec.name = cfg.name;
    rec.dir = dir;
    rec.config = serialize_config(cfg);
    rec.artifacts["config"] = "config.toml";
    write_text(dir / "config.toml", rec.config);

    if (previous && fs::exists(dir / "last.ckpt")) {
        const Checkpoint last = load_checkpoint(dir / "last.ckpt");
        TrainState st;
        st.epochs_done = last.meta.at("epochs_done").get<int>();
        st.global_step = last.meta.at("global_step").get<std::int64_t>();
        st.best_pgd_acc = last.meta.at("best_pgd_acc").get<double>();
        st.best_epoch = last.meta.at("best_epoch").get<int>();
        st.elapsed_s = last.meta.at("elapsed_s").get<double>();
        st.params = extract_prefixed(last.params, "param.");
        st.optimizer_state = extract_prefixed(last.params, "opt.");
        if (fs::exists(dir / "best.ckpt")) st.best_params = load_checkpoint(dir / "best.ckpt").params;
        MetricLog log = MetricLog::load(dir / "metrics.csv");
        if (static_cast<int>(log.rows.size()) < st.epochs_done) {
            throw std::runtime_error(dir.string() + ": metrics.csv is shorter than the last checkpoint");
        }
        log.rows.resize(st.epochs_done);
        log.save(dir / "metrics.csv");
        st.log = log;
        rec.artifacts = previous->artifacts;
        rec.artifacts["config"] = "config.toml";
        say("resuming " + id + " after epoch " + std::to_string(st.epochs_done));
        resume = std::move(st);
    } else {
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename() != "config.toml") fs::remove(e.path());
    }
    rec.status = RunStatus::running;
    rec.artifacts["metrics"] = "metrics.csv";
    save_record(rec);

    MetricWriter writer(dir / "metrics.csv", resume.has_value());
    int last_best = resume ? resume->best_epoch : -1;
    TrainHooks hooks;
    hooks.on_epoch = [&](const TrainState& st) {
        const EpochRow& row = st.log.rows.back();
        writer.write(row);
        const std::string en = epoch_name(st.epochs_done);
        save_checkpoint(dir / en, Checkpoint{st.params, ckpt_meta(cfg, id, "epoch", st.epochs_done)});
        rec.artifacts["epoch_" + std::to_string(st.epochs_done)] = en;
        if (st.best_epoch != last_best && st.best_params.size() > 0) {
            save_checkpoint(dir / "best.ckpt", Checkpoint{st.best_params, ckpt_meta(cfg, id, "best", st.best_epoch)});
            rec.artifacts["best"] = "best.ckpt";
            last_best = st.best_epoch;
        }
        ParamSet all;
        insert_prefixed(all, st.params, "param.");
        insert_prefixed(all, st.optimizer_state, "opt.");
        json meta = ckpt_meta(cfg, id, "last", st.epochs_done);
        meta["epochs_done"] = st.epochs_done;
        meta["global_step"] = st.global_step;
        meta["best_pgd_acc"] = st.best_pgd_acc;
        meta["best_epoch"] = st.best_epoch;
        meta["elapsed_s"] = st.log.rows.back().wallclock_s;
        save_checkpoint(dir / "last.ckpt", Checkpoint{all, meta});
        rec.artifacts["last"] = "last.ckpt";
        rec.epochs_done = st.epochs_done;
        rec.best_epoch = st.best_epoch;
        save_record(rec);
        char buf[200];
        std::snprintf(buf, sizeof(buf), "epoch %d  loss %.4f  train pgd %.3f fgsm %.3f  test pgd %.3f  align %.3f",
                      row.epoch, row.train_loss, row.train_pgd_acc, row.train_fgsm_acc, row.test_pgd_acc,
                      row.grad_alignment);
        say(buf);
    };

    TrainResult res;
    try {
        res = train(tc, data.train, data.test, hooks, std::move(resume));
    } catch (const std::exception& e) {
        rec.status = RunStatus::failed;
        rec.message = e.what();
        save_record(rec);
        throw;
    }

    const auto model = make_model(tc.model);
    save_checkpoint(dir / "final.ckpt", Checkpoint{res.final_params, ckpt_meta(cfg, id, "final", rec.epochs_done)});
    rec.artifacts["final"] = "final.ckpt";
    save_checkpoint(dir / "best.ckpt", Checkpoint{res.best_params, ckpt_meta(cfg, id, "best", res.best_epoch)});
    rec.artifacts["best"] = "best.ckpt";
    rec.best_epoch = res.best_epoch;
    try {
        if (auto ev = detect_co(res.log)) rec.co_epoch = ev->epoch;
    } catch (const std::invalid_argument&) {
        // Fewer than two evaluated epochs: nothing to detect.
    }

    if (cfg.final_eval.enabled && tc.eps > 0.0) {
        AttackSpec spec = AttackSpec::pgd_50_10(tc.eps, derive_seed(tc.seed, stream::attack));
        spec.steps = cfg.final_eval.steps;
        spec.restarts = cfg.final_eval.restarts;
        spec.box_clip = tc.box_clip;
        const std::uint64_t sub = derive_seed(tc.seed, stream::eval);
        json ev{{"final", evaluate_robustness(*model, res.final_params, data.test, spec, cfg.final_eval.points, sub).to_json()},
                {"best", evaluate_robustness(*model, res.best_params, data.test, spec, cfg.final_eval.points, sub).to_json()},
                {"best_epoch", res.best_epoch}};
        write_text(dir / "eval_final.json", ev.dump(2) + "\n");
        rec.artifacts["eval"] = "eval_final.json";
        rec.final_eval = ev;
    }
    rec.status = res.diverged ? RunStatus::diverged : RunStatus::complete;
    rec.message = res.divergence_message;
    save_record(rec);
    say("run " + id + " " + to_string(rec.status));
    return rec;
}

ExperimentConfig config_from_checkpoint(const fs::path& ckpt) {
    const Checkpoint c = load_checkpoint(ckpt);
    if (!c.meta.contains("config")) throw std::runtime_error(ckpt.string() + ": checkpoint carries no config");
    return parse_config(c.meta["config"].get<std::string>());
}

json evaluate_checkpoint(const fs::path& ckpt, const AttackSpec& spec, const ImageDataset& ds, std::int64_t n_points,
                         std::uint64_t subsample_seed) {
    const Checkpoint c = load_checkpoint(ckpt);
    if (!c.meta.contains("config")) throw std::runtime_error(ckpt.string() + ": checkpoint carries no config");
    const TrainConfig tc = parse_config(c.meta["config"].get<std::string>()).resolved();
    const auto model = make_model(tc.model);
    ParamSet params = c.params;
    if (params.contains("param.conv.weight") || params.contains("param.fc.weight")) params = extract_prefixed(params, "param.");
    model->check_params(params);
    json j = evaluate_robustness(*model, params, ds, spec, n_points, subsample_seed).to_json();
    j["checkpoint"] = ckpt.string();
    j["dataset"] = ds.name + "/" + ds.split;
    return j;
}

SweepParameter parse_sweep_parameter(const std::string& s) {
    if (s == "eps") return SweepParameter::eps;
    if (s == "lambda") return SweepParameter::lambda;
    if (s == "alpha") return SweepParameter::alpha;
    throw std::invalid_argument("unknown sweep parameter '" + s + "' (eps | lambda | alpha)");
}

std::string to_string(SweepParameter p) {
    switch (p) {
        case SweepParameter::eps: return "eps";
        case SweepParameter::lambda: return "lambda";
        case SweepParameter::alpha: return "alpha";
    }
    return "unknown";
}

std::string sweep_key(SweepParameter p) {
    switch (p) {
        case SweepParameter::eps: return "eps";
        case SweepParameter::lambda: return "method.lambda";
        case SweepParameter::alpha: return "method.alpha_over_eps";
    }
    return "";
}

SweepResult run_sweep(const SweepSpec& spec, const RunOptions& opts) {
    if (spec.values.empty()) throw std::invalid_argument("sweep: values must not be empty");
    if (spec.seeds.empty()) throw std::invalid_argument("sweep: seeds must not be empty");
    if (spec.workers < 1) throw std::invalid_argument("sweep: workers must be >= 1");
    SweepResult out;
    for (const auto& v : spec.values)
        for (auto s : spec.seeds) {
            SweepRun r;
            r.value = v;
            r.seed = s;
            out.runs.push_back(r);
        }

    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    RunOptions child = opts;
    child.reuse_complete = true;
    child.log = [&](const std::string& m) {
        std::lock_guard<std::mutex> g(log_mu);
        if (opts.log) opts.log(m);
    };
    auto worker = [&] {
        for (std::size_t i = next++; i < out.runs.size(); i = next++) {
            SweepRun& r = out.runs[i];
            try {
                ExperimentConfig cfg = spec.base;
                set_config_value(cfg, sweep_key(spec.parameter), r.value);
                cfg.train.seed = r.seed;
                r.id = run_id(cfg);
                const RunRecord rec = run_experiment(cfg, child);
                r.status = to_string(rec.status);
                r.error = rec.message;
                r.co = rec.co_epoch.has_value();
                const MetricLog log = MetricLog::load(rec.dir / "metrics.csv");
                if (!log.rows.empty()) {
                    r.final_test_pgd = log.rows.back().test_pgd_acc;
                    r.final_test_clean = log.rows.back().test_clean_acc;
                }
                if (rec.final_eval.contains("final")) {
                    r.eval_adv_acc = num_or_nan(rec.final_eval["final"], "adv_acc");
                    r.eval_clean_acc = num_or_nan(rec.final_eval["final"], "clean_acc");
                }
            } catch (const std::exception& e) {
                r.status = "failed";
                r.error = e.what();
                child.log("sweep child " + to_string(spec.parameter) + "=" + r.value + " seed " + std::to_string(r.seed) +
                          " failed: " + e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min<int>(spec.workers, static_cast<int>(out.runs.size()));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    auto mean_std = [](const std::vector<double>& v, double& m, double& s) {
        if (v.empty()) return;
        m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        s = 0;
        for (double x : v) s += (x - m) * (x - m);
        s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    };
    for (const auto& v : spec.values) {
        SweepRow row;
        row.value = v;
        std::vector<double> pgd, clean;
        for (const auto& r : out.runs) {
            if (r.value != v) continue;
            ++row.runs;
            if (r.status == "failed") {
                ++row.failed;
                continue;
            }
            row.co_events += r.co ? 1 : 0;
            const double adv = std::isnan(r.eval_adv_acc) ? r.final_test_pgd : r.eval_adv_acc;
            const double cl = std::isnan(r.eval_clean_acc) ? r.final_test_clean : r.eval_clean_acc;
            if (!std::isnan(adv)) pgd.push_back(adv);
            if (!std::isnan(cl)) clean.push_back(cl);
        }
        mean_std(pgd, row.pgd_mean, row.pgd_std);
        mean_std(clean, row.clean_mean, row.clean_std);
        out.rows.push_back(row);
    }
    return out;
}

std::string SweepResult::summary_csv() const {
    std::string s = "value,runs,failed,co_events,adv_acc_mean,adv_acc_std,clean_acc_mean,clean_acc_std\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), ",%d,%d,%d,%.6g,%.6g,%.6g,%.6g\n", r.runs, r.failed, r.co_events, r.pgd_mean,
                      r.pgd_std, r.clean_mean, r.clean_std);
        s += r.value + buf;
    }
    return s;
}

std::string SweepResult::runs_csv() const {
    std::string s = "value,seed,run_id,status,co,final_test_pgd,final_test_clean,eval_adv_acc,eval_clean_acc,error\n";
    for (const auto& r : runs) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), ",%d,%.6g,%.6g,%.6g,%.6g,", r.co ? 1 : 0, r.final_test_pgd, r.final_test_clean,
                      r.eval_adv_acc, r.eval_clean_acc);
        std::string err = r.error;
        for (char& c : err)
            if (c == ',' || c == '\n') c = ';';
        s += r.value + "," + std::to_string(r.seed) + "," + r.id + "," + r.status + buf + err + "\n";
    }
    return s;
}

}  // namespace coat
