#include "coat/plots.hpp"

#include <cstdio>

#include "coat/checkpoint.hpp"

namespace coat {

namespace {

std::string g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

struct RunInfo {
    ExperimentConfig cfg;
    TrainConfig tc;
};

RunInfo info(const RunRecord& r) {
    RunInfo i{parse_config(r.config), {}};
    i.tc = i.cfg.resolved();
    return i;
}

std::string prefix(const RunRecord& r, const RunInfo& i) {
    return r.id.substr(0, 12) + "," + r.name + "," + to_string(i.tc.method.kind) + "," + i.cfg.eps.text + "," +
           std::to_string(i.tc.seed);
}

}  // namespace

std::string alignment_vs_epoch_csv(const std::vector<RunRecord>& runs) {
    std::string s = "run,name,method,eps,seed,epoch,grad_alignment,train_fgsm_acc,train_pgd_acc,test_pgd_acc,cos_fgsm_pgd\n";
    for (const auto& r : runs) {
        if (!r.artifacts.count("metrics")) continue;
        const RunInfo i = info(r);
        const MetricLog log = MetricLog::load(r.dir / r.artifacts.at("metrics"));
        for (const auto& row : log.rows) {
            s += prefix(r, i) + "," + std::to_string(row.epoch) + "," + g(row.grad_alignment) + "," +
                 g(row.train_fgsm_acc) + "," + g(row.train_pgd_acc) + "," + g(row.test_pgd_acc) + "," +
                 g(row.cos_fgsm_pgd) + "\n";
        }
    }
    return s;
}

std::string weight_norms_csv(const std::vector<RunRecord>& runs) {
    std::string s = "run,name,method,eps,seed,epoch,filter,w_norm,u_norm,cos_to_first\n";
    for (const auto& r : runs) {
        const RunInfo i = info(r);
        if (i.tc.model.kind != ModelKind::single_layer_cnn) continue;
        std::vector<ParamSet> history;
        for (int e = 1; e <= r.epochs_done; ++e) {
            auto it = r.artifacts.find("epoch_" + std::to_string(e));
            if (it == r.artifacts.end()) break;
            history.push_back(load_checkpoint(r.dir / it->second).params);
        }
        if (history.empty()) continue;
        const SingleLayerCNN model(i.tc.model);
        for (const auto& f : filter_stats(model, history)) {
            s += prefix(r, i) + "," + std::to_string(f.epoch + 1) + "," + std::to_string(f.filter) + "," + g(f.w_norm) +
                 "," + g(f.u_norm) + "," + g(f.cos_to_first) + "\n";
        }
    }
    return s;
}

std::string linearization_error_csv(const std::vector<RunRecord>& runs,
                                    const std::optional<std::filesystem::path>& data_dir, std::int64_t n_points,
                                    const std::vector<double>& fractions) {
    std::string s = "run,name,method,eps,seed,checkpoint,source,fraction,mean_l2,mean_error,se\n";
    for (const auto& r : runs) {
        const RunInfo i = info(r);
        if (i.tc.eps <= 0.0) continue;
        const CifarPair data = load_experiment_data(i.cfg, data_dir);
        const auto model = make_model(i.tc.model);
        for (const char* role : {"final", "best"}) {
            auto it = r.artifacts.find(role);
            if (it == r.artifacts.end()) continue;
            const ParamSet params = load_checkpoint(r.dir / it->second).params;
            for (CornerSource src : {CornerSource::fgsm, CornerSource::random}) {
                const auto pts = linearization_sweep(*model, params, data.test, i.tc.eps, fractions, n_points,
                                                     derive_seed(i.tc.seed, stream::analysis), src);
                for (const auto& p : pts) {
                    s += prefix(r, i) + "," + role + "," + (src == CornerSource::fgsm ? "fgsm" : "random") + "," +
                         g(p.fraction) + "," + g(p.mean_l2) + "," + g(p.mean_error) + "," + g(p.se) + "\n";
                }
            }
        }
    }
    return s;
}

std::string robustness_vs_eps_csv(const std::vector<RunRecord>& runs) {
    std::string s = "run,name,method,eps,seed,eps_value,co_epoch,checkpoint,clean_acc,adv_acc,n_adv\n";
    for (const auto& r : runs) {
        if (!r.final_eval.contains("final")) continue;
        const RunInfo i = info(r);
        for (const char* role : {"final", "best"}) {
            if (!r.final_eval.contains(role)) continue;
            const auto& ev = r.final_eval[role];
            s += prefix(r, i) + "," + g(i.tc.eps) + "," + (r.co_epoch ? std::to_string(*r.co_epoch) : "") + "," + role +
                 "," + g(ev.value("clean_acc", kNaN)) + "," + g(ev.value("adv_acc", kNaN)) + "," +
                 std::to_string(ev.value("n_adv", 0)) + "\n";
        }
    }
    return s;
}

}  // namespace coat
