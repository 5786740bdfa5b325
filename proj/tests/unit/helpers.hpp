#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "coat/models.hpp"
#include "coat/ops.hpp"

namespace testutil {

inline coat::Array random_array(coat::Shape s, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    coat::Array a(std::move(s));
    for (double& v : a.data) v = nd(rng);
    return a;
}

inline coat::Array uniform_array(coat::Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    coat::Array a(std::move(s));
    for (double& v : a.data) v = u(rng);
    return a;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("coat_" + tag + "_" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Loss l(x) = <w, x> + sum_i q_i (x_i - c_i)^2 per example, independent of the labels.
/// q = 0 gives a linear loss.
class QuadraticToy : public coat::Model {
public:
    QuadraticToy(int pixels, coat::Array w, coat::Array q, coat::Array c)
        : Model(spec_for(pixels)), w_(std::move(w)), q_(std::move(q)), c_(std::move(c)) {}

    static coat::ModelSpec spec_for(int pixels) {
        coat::ModelSpec s;
        s.kind = coat::ModelKind::linear;
        s.channels = pixels;
        s.side = 1;
        s.num_classes = 1;
        return s;
    }

    std::vector<coat::ParamSpec> param_specs() const override { return {{"unused", {1}, 1, false, false}}; }
    coat::ParamSet params() const {
        coat::ParamSet p;
        p.add("unused", coat::Array({1}, 0.0));
        return p;
    }

    coat::Var logits(const coat::BoundParams& p, coat::Var x) const override {
        return coat::reshape(per_example_loss(p, x, {}), {x.shape()[0], 1});
    }

    coat::Var per_example_loss(const coat::BoundParams&, coat::Var x, std::span<const int>) const override {
        coat::Graph& g = *x.graph;
        const std::int64_t n = x.shape()[0];
        coat::Var flat = coat::flatten_batch(x);
        const coat::Shape s = flat.shape();
        auto tile = [&](const coat::Array& a) {
            coat::Array t(s);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < s[1]; ++j) t.data[i * s[1] + j] = a.data[j];
            return g.constant(std::move(t));
        };
        coat::Var lin = coat::sum_trailing(coat::mul(flat, tile(w_)));
        coat::Var diff = coat::sub(flat, tile(c_));
        coat::Var quad = coat::sum_trailing(coat::mul(tile(q_), coat::mul(diff, diff)));
        return coat::add(lin, quad);
    }

    /// Direct evaluation for oracles.
    double value(std::span<const double> x) const {
        double v = 0;
        for (std::size_t j = 0; j < x.size(); ++j) v += w_.data[j] * x[j] + q_.data[j] * (x[j] - c_.data[j]) * (x[j] - c_.data[j]);
        return v;
    }

private:
    coat::Array w_, q_, c_;
};

}  // namespace testutil
