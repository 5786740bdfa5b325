#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "coat/analysis.hpp"
#include "coat/attacks.hpp"
#include "coat/checkpoint.hpp"
#include "helpers.hpp"

using namespace coat;

namespace {

ModelSpec cnn_spec(int channels, int side, int classes, int filters, int kernel, int stride = 1, int pad = 0) {
    ModelSpec s;
    s.kind = ModelKind::single_layer_cnn;
    s.channels = channels;
    s.side = side;
    s.num_classes = classes;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
}

ParamSet random_params(const Model& m, std::mt19937_64& rng, double bias_scale = 0.3) {
    ParamSet p = init_params(m, InitScheme::kaiming(), rng());
    std::normal_distribution<double> nd(0.0, bias_scale);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].name.find("bias") == std::string::npos) continue;
        for (double& v : p.data(i)) v = nd(rng);
    }
    return p;
}

Array run_logits(const Model& m, const ParamSet& params, const Array& x) {
    Graph g;
    BoundParams p = bind(g, params, false);
    return m.logits(p, g.constant(x)).value();
}

// Explicit patch loop: f_k = sum_ij U[i*P+j, k] relu(<w_i, z_j> + b_i) + c_k.
struct CnnOracle {
    ModelSpec s;
    const ParamSet& p;
    std::int64_t ho() const { return (s.side + 2 * s.pad - s.kernel) / s.stride + 1; }

    double pre(const double* x, int i, std::int64_t r, std::int64_t c) const {
        const Array& w = p.at("conv.weight");
        double v = p.at("conv.bias").data[i];
        for (int ch = 0; ch < s.channels; ++ch)
            for (int a = 0; a < s.kernel; ++a)
                for (int b = 0; b < s.kernel; ++b) {
                    const std::int64_t rr = r * s.stride + a - s.pad, cc = c * s.stride + b - s.pad;
                    if (rr < 0 || cc < 0 || rr >= s.side || cc >= s.side) continue;
                    v += w.data[((i * s.channels + ch) * s.kernel + a) * s.kernel + b] *
                         x[(ch * s.side + rr) * s.side + cc];
                }
        return v;
    }

    std::vector<double> logits(const double* x) const {
        const std::int64_t P = ho() * ho();
        const Array& U = p.at("fc.weight");
        std::vector<double> out(p.at("fc.bias").data);
        for (int i = 0; i < s.filters; ++i)
            for (std::int64_t r = 0; r < ho(); ++r)
                for (std::int64_t c = 0; c < ho(); ++c) {
                    const double a = std::max(0.0, pre(x, i, r, c));
                    const std::int64_t row = i * P + r * ho() + c;
                    for (int k = 0; k < s.num_classes; ++k) out[k] += U.data[row * s.num_classes + k] * a;
                }
        return out;
    }

    // Gradient of sum_k v_k f_k with respect to x.
    std::vector<double> logit_grad(const double* x, const std::vector<double>& v) const {
        const std::int64_t P = ho() * ho();
        const Array& U = p.at("fc.weight");
        const Array& w = p.at("conv.weight");
        std::vector<double> g(static_cast<std::size_t>(s.channels * s.side * s.side), 0.0);
        for (int i = 0; i < s.filters; ++i)
            for (std::int64_t r = 0; r < ho(); ++r)
                for (std::int64_t c = 0; c < ho(); ++c) {
                    if (pre(x, i, r, c) <= 0) continue;
                    const std::int64_t row = i * P + r * ho() + c;
                    double coef = 0;
                    for (int k = 0; k < s.num_classes; ++k) coef += U.data[row * s.num_classes + k] * v[k];
                    for (int ch = 0; ch < s.channels; ++ch)
                        for (int a = 0; a < s.kernel; ++a)
                            for (int b = 0; b < s.kernel; ++b) {
                                const std::int64_t rr = r * s.stride + a - s.pad, cc = c * s.stride + b - s.pad;
                                if (rr < 0 || cc < 0 || rr >= s.side || cc >= s.side) continue;
                                g[(ch * s.side + rr) * s.side + cc] +=
                                    coef * w.data[((i * s.channels + ch) * s.kernel + a) * s.kernel + b];
                            }
                }
        return g;
    }
};

}  // namespace

TEST(SingleLayerCNN, MatchesPatchLoop) {
    std::mt19937_64 rng(1);
    for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 0}}) {
        const ModelSpec s = cnn_spec(3, 7, 4, 3, 3, stride, pad);
        SingleLayerCNN m(s);
        const ParamSet params = random_params(m, rng);
        const Array x = testutil::uniform_array(m.input_shape(3), rng);
        const Array out = run_logits(m, params, x);
        CnnOracle o{s, params};
        for (int n = 0; n < 3; ++n) {
            const auto want = o.logits(x.data.data() + n * 3 * 49);
            for (int k = 0; k < 4; ++k) EXPECT_NEAR(out.data[n * 4 + k], want[k], 1e-10) << stride << "/" << pad;
        }
    }
}

TEST(SingleLayerCNN, InputGradientMatchesClosedForm) {
    std::mt19937_64 rng(2);
    const ModelSpec s = cnn_spec(3, 6, 5, 4, 3);
    SingleLayerCNN m(s);
    const ParamSet params = random_params(m, rng);
    const Array x = testutil::uniform_array(m.input_shape(4), rng);
    const std::vector<int> y{0, 3, 1, 4};
    const InputGrad ig = input_gradient(m, params, x, y);
    CnnOracle o{s, params};
    const std::int64_t d = 3 * 36;
    for (int n = 0; n < 4; ++n) {
        const double* xn = x.data.data() + n * d;
        auto f = o.logits(xn);
        const double mx = *std::max_element(f.begin(), f.end());
        double z = 0;
        for (double v : f) z += std::exp(v - mx);
        std::vector<double> v(5);
        for (int k = 0; k < 5; ++k) v[k] = std::exp(f[k] - mx) / z - (k == y[n] ? 1.0 : 0.0);
        const auto g = o.logit_grad(xn, v);
        for (std::int64_t j = 0; j < d; ++j) EXPECT_NEAR(ig.grad.data[n * d + j], g[j], 1e-10);
        EXPECT_NEAR(ig.loss[n], std::log(z) + mx - f[y[n]], 1e-10);
    }
}

TEST(SingleLayerCNN, NonnegativePreactivationsGiveAlignmentOne) {
    // Positive filters and biases on inputs in [0,1] keep every ReLU active, so
    // the model is affine in x. With two classes the cross-entropy gradient is
    // (p_1 - y_1)(grad f_1 - grad f_2), whose direction cannot change.
    std::mt19937_64 rng(3);
    SingleLayerCNN m(cnn_spec(3, 6, 2, 3, 3));
    ParamSet params = random_params(m, rng);
    for (double& v : params.data("conv.weight")) v = std::abs(v);
    for (double& v : params.data("conv.bias")) v = std::abs(v) + 0.1;
    const Array x = testutil::uniform_array(m.input_shape(8), rng, 0.2, 0.8);
    const std::vector<int> y{0, 1, 1, 0, 0, 1, 0, 1};
    const AlignmentEstimate a = gradient_alignment(m, params, x, y, 0.1, 4, 7, true);
    EXPECT_NEAR(a.mean, 1.0, 1e-12);
}

TEST(Loss, UniformLogitsGiveLogK) {
    for (int k : {2, 3, 10}) {
        SingleLayerCNN m(cnn_spec(3, 5, k, 2, 3));
        ParamSet params = init_params(m, InitScheme::kaiming(), 0);
        for (double& v : params.data("fc.weight")) v = 0.0;
        std::mt19937_64 rng(4);
        const Array x = testutil::uniform_array(m.input_shape(3), rng);
        Graph g;
        BoundParams p = bind(g, params, false);
        std::vector<int> y{0, 1, k - 1};
        EXPECT_NEAR(loss(m, p, g.constant(x), y).value().item(), std::log(static_cast<double>(k)), 1e-12);
    }
}

TEST(Loss, BatchMeanOfSingles) {
    std::mt19937_64 rng(5);
    SingleLayerCNN m(cnn_spec(3, 6, 10, 4, 3));
    const ParamSet params = random_params(m, rng);
    const Array x = testutil::uniform_array(m.input_shape(2), rng);
    const std::vector<int> y{2, 7};
    auto eval = [&](const Array& xs, std::span<const int> ys) {
        Graph g;
        BoundParams p = bind(g, params, false);
        return loss(m, p, g.constant(xs), ys).value().item();
    };
    const std::int64_t d = 3 * 36;
    Array x0({1, 3, 6, 6}, std::vector<double>(x.data.begin(), x.data.begin() + d));
    Array x1({1, 3, 6, 6}, std::vector<double>(x.data.begin() + d, x.data.end()));
    const int y0[] = {2}, y1[] = {7};
    EXPECT_NEAR(eval(x, y), 0.5 * (eval(x0, y0) + eval(x1, y1)), 1e-12);
}

TEST(Init, GaussianScalesAndZeroBiases) {
    SingleLayerCNN m(cnn_spec(3, 3, 10, 4000, 3));
    const ParamSet p = init_params(m, InitScheme::gaussian(0.5, 0.02), 7);
    auto sd = [](std::span<const double> v) {
        double s = 0, s2 = 0;
        for (double x : v) {
            s += x;
            s2 += x * x;
        }
        const double n = static_cast<double>(v.size());
        return std::sqrt(s2 / n - (s / n) * (s / n));
    };
    ASSERT_GE(p.at("conv.weight").size(), 100000);
    EXPECT_NEAR(sd(p.at("conv.weight").data), 0.5, 0.5 * 0.02);
    EXPECT_NEAR(sd(p.at("fc.weight").data), 0.02, 0.02 * 0.02);
    for (double v : p.at("conv.bias").data) EXPECT_EQ(v, 0.0);
    for (double v : p.at("fc.bias").data) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(init_params(m, InitScheme::gaussian(0.5, 0.02), 7), p);
    EXPECT_FALSE(init_params(m, InitScheme::gaussian(0.5, 0.02), 8) == p);
}

TEST(Init, KaimingStd) {
    SingleLayerCNN m(cnn_spec(3, 3, 10, 4000, 3));
    const ParamSet p = init_params(m, InitScheme::kaiming(), 1);
    double s2 = 0;
    for (double v : p.at("conv.weight").data) s2 += v * v;
    EXPECT_NEAR(std::sqrt(s2 / static_cast<double>(p.at("conv.weight").size())), std::sqrt(2.0 / 27.0),
                0.02 * std::sqrt(2.0 / 27.0));
}

TEST(Init, NonPositiveSigmaIsAnError) {
    SingleLayerCNN m(cnn_spec(3, 5, 3, 2, 3));
    EXPECT_THROW(init_params(m, InitScheme::gaussian(0.0, 1.0), 0), std::invalid_argument);
    EXPECT_THROW(init_params(m, InitScheme::gaussian(1.0, -1.0), 0), std::invalid_argument);
}

TEST(ZeroFilter, EqualsModelWithoutThatFilter) {
    std::mt19937_64 rng(6);
    const ModelSpec s = cnn_spec(3, 6, 4, 4, 3);
    SingleLayerCNN m(s);
    const ParamSet params = random_params(m, rng);
    const ParamSet before = params;
    const int drop = 2;
    const ParamSet z = zero_filter(m, params, drop);
    EXPECT_EQ(params, before);

    ModelSpec s3 = s;
    s3.filters = 3;
    SingleLayerCNN m3(s3);
    ParamSet r = init_params(m3, InitScheme::kaiming(), 0);
    const std::int64_t per = 27, P = m.positions();
    auto w = r.data("conv.weight");
    auto b = r.data("conv.bias");
    auto u = r.data("fc.weight");
    int dst = 0;
    for (int i = 0; i < 4; ++i) {
        if (i == drop) continue;
        for (std::int64_t j = 0; j < per; ++j) w[dst * per + j] = params.at("conv.weight").data[i * per + j];
        b[dst] = params.at("conv.bias").data[i];
        for (std::int64_t j = 0; j < P * 4; ++j) u[dst * P * 4 + j] = params.at("fc.weight").data[i * P * 4 + j];
        ++dst;
    }
    std::copy(params.at("fc.bias").data.begin(), params.at("fc.bias").data.end(), r.data("fc.bias").begin());

    const Array x = testutil::uniform_array(m.input_shape(5), rng);
    const Array a = run_logits(m, z, x), c = run_logits(m3, r, x);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], c.data[i], 1e-12);
}

TEST(ZeroFilter, AllFiltersZeroedGivesConstantLogits) {
    std::mt19937_64 rng(7);
    SingleLayerCNN m(cnn_spec(3, 6, 4, 3, 3));
    ParamSet p = random_params(m, rng);
    for (int i = 0; i < 3; ++i) p = zero_filter(m, p, i);
    const Array x = testutil::uniform_array(m.input_shape(3), rng);
    const Array out = run_logits(m, p, x);
    for (int n = 0; n < 3; ++n)
        for (int k = 0; k < 4; ++k) EXPECT_EQ(out.data[n * 4 + k], p.at("fc.bias").data[k]);
}

TEST(ZeroFilter, IndexOutOfRange) {
    SingleLayerCNN m(cnn_spec(3, 5, 3, 2, 3));
    const ParamSet p = init_params(m, InitScheme::kaiming(), 0);
    EXPECT_THROW(zero_filter(m, p, 2), std::out_of_range);
    EXPECT_THROW(zero_filter(m, p, -1), std::out_of_range);
}

TEST(Models, SmallConvNetAndLinearAreFinite) {
    std::mt19937_64 rng(8);
    ModelSpec s;
    s.kind = ModelKind::small_conv_net;
    s.side = 8;
    s.widths = {4, 6, 8};
    s.hidden = 10;
    SmallConvNet net(s);
    const ParamSet p = init_params(net, InitScheme::kaiming(), 1);
    const Array x = testutil::uniform_array(net.input_shape(3), rng);
    const std::vector<int> y{1, 5, 9};
    const InputGrad g = input_gradient(net, p, x, y);
    EXPECT_TRUE(all_finite(g.grad.data));
    EXPECT_EQ(g.grad.shape, x.shape);
    EXPECT_EQ(run_logits(net, p, x).shape, (Shape{3, 10}));

    s.kind = ModelKind::linear;
    auto lin = make_model(s);
    EXPECT_EQ(run_logits(*lin, init_params(*lin, InitScheme::kaiming(), 0), x).shape, (Shape{3, 10}));
}

TEST(Models, WrongInputShapeNamesBothShapes) {
    SingleLayerCNN m(cnn_spec(3, 6, 4, 2, 3));
    const ParamSet p = init_params(m, InitScheme::kaiming(), 0);
    Graph g;
    BoundParams bp = bind(g, p, false);
    try {
        m.logits(bp, g.constant(Array({2, 1, 6, 6}, 0.0)));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2, 1, 6, 6]"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, BitExactRoundTrip) {
    testutil::TempDir tmp("ckpt");
    std::mt19937_64 rng(9);
    SingleLayerCNN m(cnn_spec(3, 6, 4, 3, 3));
    Checkpoint c;
    c.params = random_params(m, rng);
    c.params.data("fc.bias")[0] = 1.0 / 3.0;
    c.params.data("fc.bias")[1] = -0.0;
    c.params.data("fc.bias")[2] = 5e-324;
    c.meta = {{"epoch", 3}, {"role", "final"}};
    save_checkpoint(tmp.path() / "a.ckpt", c);
    const Checkpoint r = load_checkpoint(tmp.path() / "a.ckpt");
    EXPECT_EQ(r.params, c.params);
    EXPECT_TRUE(std::signbit(r.params.at("fc.bias").data[1]));
    EXPECT_EQ(r.meta, c.meta);
    m.check_params(r.params);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    testutil::TempDir tmp("ckpt_bad");
    Checkpoint c;
    c.params.add("w", Array({4}, 1.0));
    save_checkpoint(tmp.path() / "a.ckpt", c);
    const auto full = std::filesystem::file_size(tmp.path() / "a.ckpt");
    std::filesystem::resize_file(tmp.path() / "a.ckpt", full - 12);
    EXPECT_THROW(load_checkpoint(tmp.path() / "a.ckpt"), std::runtime_error);
    {
        std::ofstream os(tmp.path() / "b.ckpt", std::ios::binary);
        os << "NOTACKPT";
    }
    EXPECT_THROW(load_checkpoint(tmp.path() / "b.ckpt"), std::runtime_error);
    EXPECT_THROW(load_checkpoint(tmp.path() / "missing.ckpt"), std::runtime_error);
}

TEST(Checkpoint, ShapeMismatchNamesParameter) {
    SingleLayerCNN m4(cnn_spec(3, 6, 4, 4, 3));
    SingleLayerCNN m3(cnn_spec(3, 6, 4, 3, 3));
    const ParamSet p = init_params(m4, InitScheme::kaiming(), 0);
    try {
        m3.check_params(p);
        FAIL();
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("conv.weight"), std::string::npos) << e.what();
    }
}
