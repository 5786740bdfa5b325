#include "coat/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace coat {

std::string to_string(OptimizerSpec::Kind k) { return k == OptimizerSpec::Kind::adam ? "adam" : "sgd"; }

OptimizerSpec::Kind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerSpec::Kind::adam;
    if (s == "sgd") return OptimizerSpec::Kind::sgd;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam, sgd)");
}

std::string to_string(ScheduleSpec::Kind k) { return k == ScheduleSpec::Kind::cyclic ? "cyclic" : "constant"; }

ScheduleSpec::Kind parse_schedule(const std::string& s) {
    if (s == "cyclic") return ScheduleSpec::Kind::cyclic;
    if (s == "constant") return ScheduleSpec::Kind::constant;
    throw std::invalid_argument("unknown schedule '" + s + "' (expected cyclic, constant)");
}

Optimizer::Optimizer(OptimizerSpec spec, const ParamSet& params) : spec_(spec) {
    for (const auto& e : params) {
        m_.emplace_back(e.value.shape, 0.0);
        if (spec_.kind == OptimizerSpec::Kind::adam) v_.emplace_back(e.value.shape, 0.0);
    }
}

void Optimizer::step(ParamSet& params, const std::vector<Array>& grads, double lr) {
    if (grads.size() != params.size() || m_.size() != params.size()) {
        throw std::invalid_argument("optimizer: gradient count does not match parameters");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params.data(k);
        const auto& g = grads[k].data;
        if (g.size() != p.size()) throw ShapeError("optimizer: gradient shape mismatch for '" + params[k].name + "'");
        auto& m = m_[k].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] + spec_.weight_decay * p[i];
            if (spec_.kind == OptimizerSpec::Kind::adam) {
                auto& v = v_[k].data;
                m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * gi;
                v[i] = spec_.beta2 * v[i] + (1.0 - spec_.beta2) * gi * gi;
                p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + spec_.adam_eps);
            } else {
                m[i] = spec_.momentum * m[i] + gi;
                p[i] -= lr * m[i];
            }
        }
    }
}

ParamSet Optimizer::state() const {
    ParamSet s;
    s.add("opt.t", Array::scalar(static_cast<double>(t_)));
    for (std::size_t k = 0; k < m_.size(); ++k) s.add("opt.m." + std::to_string(k), m_[k]);
    for (std::size_t k = 0; k < v_.size(); ++k) s.add("opt.v." + std::to_string(k), v_[k]);
    return s;
}

void Optimizer::load_state(const ParamSet& s) {
    t_ = static_cast<std::int64_t>(s.at("opt.t").item());
    for (std::size_t k = 0; k < m_.size(); ++k) {
        const Array& a = s.at("opt.m." + std::to_string(k));
        if (a.shape != m_[k].shape) throw ShapeError("optimizer state shape mismatch for slot " + std::to_string(k));
        m_[k] = a;
    }
    for (std::size_t k = 0; k < v_.size(); ++k) {
        const Array& a = s.at("opt.v." + std::to_string(k));
        if (a.shape != v_[k].shape) throw ShapeError("optimizer state shape mismatch for slot " + std::to_string(k));
        v_[k] = a;
    }
}

double ScheduleSpec::lr(std::int64_t t, std::int64_t total) const {
    if (kind == Kind::constant) return max_lr;
    if (total <= 0) throw std::invalid_argument("schedule: total steps must be positive");
    const double T = static_cast<double>(total);
    const double peak = peak_fraction * T;
    const double s = static_cast<double>(t);
    if (s <= peak) return peak > 0.0 ? max_lr * s / peak : max_lr;
    return std::max(0.0, max_lr * (T - s) / (T - peak));
}

}  // namespace coat
