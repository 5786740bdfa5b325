#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coat/param_set.hpp"

namespace coat {

enum class ModelKind { single_layer_cnn, small_conv_net, linear };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct ModelSpec {
    ModelKind kind = ModelKind::single_layer_cnn;
    int channels = 3;
    int side = 32;
    int num_classes = 10;
    // single_layer_cnn
    int filters = 4;
    int kernel = 3;
    int stride = 1;
    int pad = 0;
    // small_conv_net: each block is a 3x3 conv (pad 1, stride 2) + ReLU.
    std::vector<int> widths{16, 32};
    int hidden = 64;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParamSpec {
    std::string name;
    Shape shape;
    std::int64_t fan_in = 1;
    bool is_bias = false;
    /// Which Gaussian scale applies under InitScheme::gaussian.
    bool first_layer = false;
};

class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
    virtual ~Model() = default;

    const ModelSpec& spec() const { return spec_; }
    Shape input_shape(std::int64_t n) const { return {n, spec_.channels, spec_.side, spec_.side}; }
    int num_classes() const { return spec_.num_classes; }

    virtual std::vector<ParamSpec> param_specs() const = 0;
    /// x: [N, C, H, W] -> [N, K].
    virtual Var logits(const BoundParams& p, Var x) const = 0;
    /// Per-example training loss [N]; cross-entropy unless overridden.
    virtual Var per_example_loss(const BoundParams& p, Var x, std::span<const int> y) const;

    /// Throws if `params` does not carry exactly this model's parameter table,
    /// naming the offending parameter.
    void check_params(const ParamSet& params) const;

protected:
    void check_input(Var x) const;

private:
    ModelSpec spec_;
};

/// f(x)_k = sum_ij U[i*P + j, k] relu(<w_i, z_j> + b_i) + c_k over the
/// P = Ho*Wo conv positions j. Parameters: conv.weight [m,C,kh,kw],
/// conv.bias [m], fc.weight [m*P, K], fc.bias [K].
class SingleLayerCNN : public Model {
public:
    explicit SingleLayerCNN(ModelSpec spec);
    std::vector<ParamSpec> param_specs() const override;
    Var logits(const BoundParams& p, Var x) const override;
    Var feature_maps(const BoundParams& p, Var x) const;  // post-ReLU [N, m, Ho, Wo]
    std::int64_t out_side() const;
    std::int64_t positions() const { return out_side() * out_side(); }
};

class SmallConvNet : public Model {
public:
    explicit SmallConvNet(ModelSpec spec);
    std::vector<ParamSpec> param_specs() const override;
    Var logits(const BoundParams& p, Var x) const override;

private:
    std::vector<std::int64_t> sides_;
};

class LinearModel : public Model {
public:
    explicit LinearModel(ModelSpec spec) : Model(std::move(spec)) {}
    std::vector<ParamSpec> param_specs() const override;
    Var logits(const BoundParams& p, Var x) const override;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec);

struct InitScheme {
    enum class Kind { kaiming_normal, gaussian };
    Kind kind = Kind::kaiming_normal;
    double sigma_w = 0.0;  // first-layer weights under `gaussian`
    double sigma_u = 0.0;  // every other weight under `gaussian`

    static InitScheme kaiming() { return {}; }
    static InitScheme gaussian(double sw, double su) { return {Kind::gaussian, sw, su}; }
};

/// Biases are zero; weights are i.i.d. normal per the scheme.
ParamSet init_params(const Model& model, const InitScheme& scheme, std::uint64_t seed);

/// Mean per-example loss.
Var loss(const Model& model, const BoundParams& p, Var x, std::span<const int> y);

/// Copy of `params` with filter `index` of a SingleLayerCNN and its bias zeroed.
ParamSet zero_filter(const Model& model, const ParamSet& params, int index);

/// Argmax of each logit row, ties to the lowest index.
std::vector<int> predict(const Model& model, const ParamSet& params, const Array& x);
std::vector<int> argmax_rows(const Array& logits);

}  // namespace coat
