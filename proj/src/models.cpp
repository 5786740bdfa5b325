#include "coat/models.hpp"

#include <cmath>
#include <stdexcept>

#include "coat/ops.hpp"
#include "coat/rng.hpp"

namespace coat {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::single_layer_cnn: return "single_layer_cnn";
        case ModelKind::small_conv_net: return "small_conv_net";
        case ModelKind::linear: return "linear";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "single_layer_cnn") return ModelKind::single_layer_cnn;
    if (s == "small_conv_net") return ModelKind::small_conv_net;
    if (s == "linear") return ModelKind::linear;
    throw std::invalid_argument("unknown model kind '" + s + "' (expected single_layer_cnn, small_conv_net, linear)");
}

Var Model::per_example_loss(const BoundParams& p, Var x, std::span<const int> y) const {
    return softmax_cross_entropy(logits(p, x), y);
}

void Model::check_params(const ParamSet& params) const {
    const auto specs = param_specs();
    for (const auto& s : specs) {
        if (!params.contains(s.name)) throw std::invalid_argument("missing parameter '" + s.name + "'");
        const Array& v = params.at(s.name);
        if (v.shape != s.shape) {
            throw ShapeError("parameter '" + s.name + "' has shape " + to_string(v.shape) + ", model expects " +
                             to_string(s.shape));
        }
    }
    if (params.size() != specs.size()) {
        for (const auto& e : params) {
            bool known = false;
            for (const auto& s : specs) known = known || s.name == e.name;
            if (!known) throw std::invalid_argument("unexpected parameter '" + e.name + "'");
        }
    }
}

void Model::check_input(Var x) const {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != spec_.channels || s[2] != spec_.side || s[3] != spec_.side) {
        throw ShapeError("model expects input [N, " + std::to_string(spec_.channels) + ", " +
                         std::to_string(spec_.side) + ", " + std::to_string(spec_.side) + "], got " + to_string(s));
    }
}

SingleLayerCNN::SingleLayerCNN(ModelSpec spec) : Model(std::move(spec)) {
    const auto& s = this->spec();
    if (s.filters < 1 || s.kernel < 1 || s.stride < 1 || s.pad < 0) throw std::invalid_argument("invalid CNN geometry");
    if (out_side() < 1) throw std::invalid_argument("kernel larger than padded input");
}

std::int64_t SingleLayerCNN::out_side() const {
    const auto& s = spec();
    return (s.side + 2 * s.pad - s.kernel) / s.stride + 1;
}

std::vector<ParamSpec> SingleLayerCNN::param_specs() const {
    const auto& s = spec();
    const std::int64_t m = s.filters, k = s.kernel, c = s.channels;
    return {
        {"conv.weight", {m, c, k, k}, c * k * k, false, true},
        {"conv.bias", {m}, 1, true, true},
        {"fc.weight", {m * positions(), s.num_classes}, m * positions(), false, false},
        {"fc.bias", {s.num_classes}, 1, true, false},
    };
}

Var SingleLayerCNN::feature_maps(const BoundParams& p, Var x) const {
    check_input(x);
    return relu(add_channel_bias(conv2d(x, p["conv.weight"], spec().stride, spec().pad), p["conv.bias"]));
}

Var SingleLayerCNN::logits(const BoundParams& p, Var x) const {
    return add_row_bias(matmul(flatten_batch(feature_maps(p, x)), p["fc.weight"]), p["fc.bias"]);
}

SmallConvNet::SmallConvNet(ModelSpec spec) : Model(std::move(spec)) {
    const auto& s = this->spec();
    if (s.widths.size() < 2 || s.widths.size() > 4) throw std::invalid_argument("small_conv_net needs 2 to 4 blocks");
    std::int64_t side = s.side;
    for (std::size_t i = 0; i < s.widths.size(); ++i) {
        side = (side - 1) / 2 + 1;
        sides_.push_back(side);
    }
}

std::vector<ParamSpec> SmallConvNet::param_specs() const {
    const auto& s = spec();
    std::vector<ParamSpec> out;
    std::int64_t in_c = s.channels;
    for (std::size_t i = 0; i < s.widths.size(); ++i) {
        const std::string pre = "conv" + std::to_string(i + 1);
        const std::int64_t w = s.widths[i];
        out.push_back({pre + ".weight", {w, in_c, 3, 3}, in_c * 9, false, i == 0});
        out.push_back({pre + ".bias", {w}, 1, true, i == 0});
        in_c = w;
    }
    const std::int64_t flat = in_c * sides_.back() * sides_.back();
    out.push_back({"fc1.weight", {flat, s.hidden}, flat, false, false});
    out.push_back({"fc1.bias", {s.hidden}, 1, true, false});
    out.push_back({"fc2.weight", {s.hidden, s.num_classes}, s.hidden, false, false});
    out.push_back({"fc2.bias", {s.num_classes}, 1, true, false});
    return out;
}

Var SmallConvNet::logits(const BoundParams& p, Var x) const {
    check_input(x);
    Var h = x;
    for (std::size_t i = 0; i < spec().widths.size(); ++i) {
        const std::string pre = "conv" + std::to_string(i + 1);
        h = relu(add_channel_bias(conv2d(h, p[pre + ".weight"], 2, 1), p[pre + ".bias"]));
    }
    h = relu(add_row_bias(matmul(flatten_batch(h), p["fc1.weight"]), p["fc1.bias"]));
    return add_row_bias(matmul(h, p["fc2.weight"]), p["fc2.bias"]);
}

std::vector<ParamSpec> LinearModel::param_specs() const {
    const auto& s = spec();
    const std::int64_t d = static_cast<std::int64_t>(s.channels) * s.side * s.side;
    return {{"fc.weight", {d, s.num_classes}, d, false, true}, {"fc.bias", {s.num_classes}, 1, true, true}};
}

Var LinearModel::logits(const BoundParams& p, Var x) const {
    check_input(x);
    return add_row_bias(matmul(flatten_batch(x), p["fc.weight"]), p["fc.bias"]);
}

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
    switch (spec.kind) {
        case ModelKind::single_layer_cnn: return std::make_unique<SingleLayerCNN>(spec);
        case ModelKind::small_conv_net: return std::make_unique<SmallConvNet>(spec);
        case ModelKind::linear: return std::make_unique<LinearModel>(spec);
    }
    throw std::invalid_argument("unknown model kind");
}

ParamSet init_params(const Model& model, const InitScheme& scheme, std::uint64_t seed) {
    if (scheme.kind == InitScheme::Kind::gaussian && !(scheme.sigma_w > 0.0 && scheme.sigma_u > 0.0)) {
        throw std::invalid_argument("gaussian init requires sigma_w > 0 and sigma_u > 0");
    }
    Rng rng = make_rng(seed, stream::init);
    ParamSet out;
    for (const auto& s : model.param_specs()) {
        Array a(s.shape, 0.0);
        if (!s.is_bias) {
            const double sd = scheme.kind == InitScheme::Kind::kaiming_normal
                                  ? std::sqrt(2.0 / static_cast<double>(s.fan_in))
                                  : (s.first_layer ? scheme.sigma_w : scheme.sigma_u);
            std::normal_distribution<double> nd(0.0, sd);
            for (double& v : a.data) v = nd(rng);
        }
        out.add(s.name, std::move(a));
    }
    return out;
}

Var loss(const Model& model, const BoundParams& p, Var x, std::span<const int> y) {
    return mean(model.per_example_loss(p, x, y));
}

ParamSet zero_filter(const Model& model, const ParamSet& params, int index) {
    if (model.spec().kind != ModelKind::single_layer_cnn) throw std::invalid_argument("zero_filter needs a single_layer_cnn");
    if (index < 0 || index >= model.spec().filters) {
        throw std::out_of_range("filter index " + std::to_string(index) + " out of range [0, " +
                                std::to_string(model.spec().filters) + ")");
    }
    ParamSet out = params;
    auto w = out.data("conv.weight");
    const std::size_t per = w.size() / static_cast<std::size_t>(model.spec().filters);
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(index * per), per, 0.0);
    out.data("conv.bias")[index] = 0.0;
    return out;
}

std::vector<int> argmax_rows(const Array& logits) {
    const std::int64_t n = logits.shape.at(0), k = logits.shape.at(1);
    std::vector<int> out(n);
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (std::int64_t j = 1; j < k; ++j)
            if (logits.data[i * k + j] > logits.data[i * k + best]) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

std::vector<int> predict(const Model& model, const ParamSet& params, const Array& x) {
    Graph g;
    BoundParams p = bind(g, params, false);
    return argmax_rows(model.logits(p, g.constant(x)).value());
}

}  // namespace coat
