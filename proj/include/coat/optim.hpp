#pragma once

#include <string>
#include <vector>

#include "coat/param_set.hpp"

namespace coat {

struct OptimizerSpec {
    enum class Kind { adam, sgd };
    Kind kind = Kind::adam;
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

std::string to_string(OptimizerSpec::Kind k);
OptimizerSpec::Kind parse_optimizer(const std::string& s);

class Optimizer {
public:
    Optimizer(OptimizerSpec spec, const ParamSet& params);

    /// One update with the given learning rate.
    void step(ParamSet& params, const std::vector<Array>& grads, double lr);
    std::int64_t steps() const { return t_; }

    /// State as named tensors (under "opt.") for checkpointing.
    ParamSet state() const;
    void load_state(const ParamSet& state);

private:
    OptimizerSpec spec_;
    std::vector<Array> m_, v_;
    std::int64_t t_ = 0;
};

struct ScheduleSpec {
    enum class Kind { cyclic, constant };
    Kind kind = Kind::cyclic;
    double max_lr = 0.003;
    double peak_fraction = 0.4;

    /// Learning rate at step t of total T. Cyclic: linear 0 -> max_lr over the
    /// first peak_fraction of T, then linear back to 0 at T.
    double lr(std::int64_t t, std::int64_t total) const;
};

std::string to_string(ScheduleSpec::Kind k);
ScheduleSpec::Kind parse_schedule(const std::string& s);

}  // namespace coat
