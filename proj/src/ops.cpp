#include "coat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace coat {

namespace {

Graph& graph_of(Var a) {
    if (!a.graph) throw std::invalid_argument("use of an unbound Var");
    return *a.graph;
}

Graph& same_graph(Var a, Var b) {
    Graph& g = graph_of(a);
    if (b.graph != &g) throw std::invalid_argument("operands belong to different graphs");
    return g;
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <class F>
Array map_values(const Array& a, F f) {
    Array out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

template <class F>
Array zip_values(const Array& a, const Array& b, F f) {
    Array out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

template <class F>
Var binary(OpKind kind, const char* name, Var a, Var b, F f) {
    Graph& g = same_graph(a, b);
    require_same_shape(name, a.shape(), b.shape());
    Array out = zip_values(a.value(), b.value(), f);
    return g.record(kind, {a.id, b.id}, std::move(out));
}

// Rows of the leading axis and the size of everything after it.
std::pair<std::int64_t, std::int64_t> leading_split(const char* op, const Shape& s) {
    if (s.empty()) throw ShapeError(std::string(op) + ": needs rank >= 1, got " + to_string(s));
    const std::int64_t n = s[0];
    const std::int64_t total = numel(s);
    return {n, n == 0 ? 0 : total / n};
}

struct ConvDims {
    std::int64_t n, c, h, w, f, kh, kw, ho, wo;
    int s, p;
};

// Output positions o along one axis with 0 <= o*s + k - p < in_size; returns [lo, hi).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t k, std::int64_t in_size, std::int64_t out_size, int s,
                                                  int p) {
    const std::int64_t a = p - k;
    const std::int64_t lo = a <= 0 ? 0 : (a + s - 1) / s;
    const std::int64_t b = in_size - 1 + p - k;
    if (b < 0) return {0, 0};
    const std::int64_t hi = std::min(out_size, b / s + 1);
    return {lo, std::max(lo, hi)};
}

ConvDims conv_dims(const Shape& x, const Shape& w, int stride, int pad) {
    if (x.size() != 4 || w.size() != 4) {
        throw ShapeError("conv2d: expects [N,C,H,W] input and [F,C,KH,KW] filters, got " + to_string(x) + " and " +
                         to_string(w));
    }
    if (x[1] != w[1]) throw ShapeError("conv2d: channel mismatch " + to_string(x) + " vs " + to_string(w));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
    ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, stride, pad};
    const std::int64_t eh = d.h + 2 * pad - d.kh;
    const std::int64_t ew = d.w + 2 * pad - d.kw;
    if (eh < 0 || ew < 0) throw ShapeError("conv2d: filter " + to_string(w) + " larger than padded input " + to_string(x));
    d.ho = eh / stride + 1;
    d.wo = ew / stride + 1;
    return d;
}

void conv_forward(const ConvDims& d, const double* x, const double* w, double* y) {
    const std::int64_t plane_in = d.h * d.w;
    const std::int64_t plane_out = d.ho * d.wo;
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t f = 0; f < d.f; ++f) {
            double* o = y + (n * d.f + f) * plane_out;
            for (std::int64_t c = 0; c < d.c; ++c) {
                const double* xin = x + (n * d.c + c) * plane_in;
                for (std::int64_t ki = 0; ki < d.kh; ++ki) {
                    const auto [oh0, oh1] = valid_range(ki, d.h, d.ho, d.s, d.p);
                    for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                        const auto [ow0, ow1] = valid_range(kj, d.w, d.wo, d.s, d.p);
                        const double wv = w[((f * d.c + c) * d.kh + ki) * d.kw + kj];
                        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                            const double* row = xin + (oh * d.s + ki - d.p) * d.w + kj - d.p;
                            double* orow = o + oh * d.wo;
                            if (d.s == 1) {
                                for (std::int64_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * row[ow];
                            } else {
                                for (std::int64_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * row[ow * d.s];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_input_grad(const ConvDims& d, const double* g, const double* w, double* xg) {
    const std::int64_t plane_in = d.h * d.w;
    const std::int64_t plane_out = d.ho * d.wo;
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t c = 0; c < d.c; ++c) {
            double* xo = xg + (n * d.c + c) * plane_in;
            for (std::int64_t f = 0; f < d.f; ++f) {
                const double* gp = g + (n * d.f + f) * plane_out;
                for (std::int64_t ki = 0; ki < d.kh; ++ki) {
                    const auto [oh0, oh1] = valid_range(ki, d.h, d.ho, d.s, d.p);
                    for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                        const auto [ow0, ow1] = valid_range(kj, d.w, d.wo, d.s, d.p);
                        const double wv = w[((f * d.c + c) * d.kh + ki) * d.kw + kj];
                        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                            double* row = xo + (oh * d.s + ki - d.p) * d.w + kj - d.p;
                            const double* grow = gp + oh * d.wo;
                            for (std::int64_t ow = ow0; ow < ow1; ++ow) row[ow * d.s] += wv * grow[ow];
                        }
                    }
                }
            }
        }
    }
}

void conv_weight_grad(const ConvDims& d, const double* x, const double* g, double* wg) {
    const std::int64_t plane_in = d.h * d.w;
    const std::int64_t plane_out = d.ho * d.wo;
    for (std::int64_t f = 0; f < d.f; ++f) {
        for (std::int64_t c = 0; c < d.c; ++c) {
            for (std::int64_t ki = 0; ki < d.kh; ++ki) {
                const auto [oh0, oh1] = valid_range(ki, d.h, d.ho, d.s, d.p);
                for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                    const auto [ow0, ow1] = valid_range(kj, d.w, d.wo, d.s, d.p);
                    double acc = 0.0;
                    for (std::int64_t n = 0; n < d.n; ++n) {
                        const double* xin = x + (n * d.c + c) * plane_in;
                        const double* gp = g + (n * d.f + f) * plane_out;
                        for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                            const double* row = xin + (oh * d.s + ki - d.p) * d.w + kj - d.p;
                            const double* grow = gp + oh * d.wo;
                            for (std::int64_t ow = ow0; ow < ow1; ++ow) acc += row[ow * d.s] * grow[ow];
                        }
                    }
                    wg[((f * d.c + c) * d.kh + ki) * d.kw + kj] = acc;
                }
            }
        }
    }
}

Shape conv_out_shape(const ConvDims& d) { return {d.n, d.f, d.ho, d.wo}; }

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::add, "add", a, b, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(OpKind::sub, "sub", a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(OpKind::mul, "mul", a, b, [](double x, double y) { return x * y; }); }
Var div(Var a, Var b) { return binary(OpKind::div, "div", a, b, [](double x, double y) { return x / y; }); }

Var scale(Var a, double c) {
    Graph& g = graph_of(a);
    Array out = map_values(a.value(), [c](double x) { return c * x; });
    OpAttrs attrs;
    attrs.a = c;
    return g.record(OpKind::scale, {a.id}, std::move(out), std::move(attrs));
}

Var shift(Var a, double c) {
    Graph& g = graph_of(a);
    Array out = map_values(a.value(), [c](double x) { return x + c; });
    OpAttrs attrs;
    attrs.a = c;
    return g.record(OpKind::shift, {a.id}, std::move(out), std::move(attrs));
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
    Graph& g = graph_of(a);
    const Array& x = a.value();
    OpAttrs attrs;
    attrs.a = std::numeric_limits<double>::infinity();
    for (double v : x.data) attrs.a = std::min(attrs.a, std::abs(v));
    Array out = map_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
    return g.record(OpKind::relu, {a.id}, std::move(out), std::move(attrs));
}

Var sign(Var a) {
    Graph& g = graph_of(a);
    Array out = map_values(a.value(), [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    return g.record(OpKind::sign, {a.id}, std::move(out));
}

Var clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
    Graph& g = graph_of(a);
    Array out = map_values(a.value(), [lo, hi](double v) { return std::min(std::max(v, lo), hi); });
    OpAttrs attrs;
    attrs.a = lo;
    attrs.b = hi;
    return g.record(OpKind::clamp, {a.id}, std::move(out), std::move(attrs));
}

Var clamp_min(Var a, double lo) { return clamp(a, lo, std::numeric_limits<double>::infinity()); }

Var sqrt(Var a) {
    Graph& g = graph_of(a);
    Array out = map_values(a.value(), [](double v) { return std::sqrt(v); });
    return g.record(OpKind::sqrt, {a.id}, std::move(out));
}

Var detach(Var a) { return graph_of(a).constant(Array(a.value())); }

Var reshape(Var a, Shape shape) {
    Graph& g = graph_of(a);
    if (numel(shape) != numel(a.shape())) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    Array out(std::move(shape), a.value().data);
    return g.record(OpKind::reshape, {a.id}, std::move(out));
}

Var flatten_batch(Var a) {
    const auto [n, rest] = leading_split("flatten", a.shape());
    return reshape(a, Shape{n, rest});
}

Var sum(Var a) {
    Graph& g = graph_of(a);
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return g.record(OpKind::sum_all, {a.id}, Array::scalar(s));
}

Var mean(Var a) {
    const auto n = numel(a.shape());
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var expand_scalar(Var s, Shape shape) {
    Graph& g = graph_of(s);
    if (numel(s.shape()) != 1) throw ShapeError("expand_scalar: expects a scalar, got " + to_string(s.shape()));
    Array out(std::move(shape), s.value().data[0]);
    return g.record(OpKind::expand_scalar, {s.id}, std::move(out));
}

Var sum_trailing(Var a) {
    Graph& g = graph_of(a);
    const auto [n, rest] = leading_split("sum_trailing", a.shape());
    const Array& x = a.value();
    Array out(Shape{n});
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < rest; ++j) s += x.data[i * rest + j];
        out.data[i] = s;
    }
    return g.record(OpKind::sum_trailing, {a.id}, std::move(out));
}

Var expand_trailing(Var v, Shape shape) {
    Graph& g = graph_of(v);
    const auto [n, rest] = leading_split("expand_trailing", shape);
    if (v.shape() != Shape{n}) {
        throw ShapeError("expand_trailing: vector " + to_string(v.shape()) + " does not match " + to_string(shape));
    }
    const Array& x = v.value();
    Array out(std::move(shape));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < rest; ++j) out.data[i * rest + j] = x.data[i];
    }
    return g.record(OpKind::expand_trailing, {v.id}, std::move(out));
}

Var sum_leading(Var a) {
    Graph& g = graph_of(a);
    const auto [n, rest] = leading_split("sum_leading", a.shape());
    Shape tail(a.shape().begin() + 1, a.shape().end());
    const Array& x = a.value();
    Array out(std::move(tail));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < rest; ++j) out.data[j] += x.data[i * rest + j];
    }
    return g.record(OpKind::sum_leading, {a.id}, std::move(out));
}

Var expand_leading(Var v, std::int64_t n) {
    Graph& g = graph_of(v);
    Shape shape{n};
    shape.insert(shape.end(), v.shape().begin(), v.shape().end());
    const Array& x = v.value();
    const auto rest = static_cast<std::int64_t>(x.data.size());
    Array out(std::move(shape));
    for (std::int64_t i = 0; i < n; ++i) std::copy(x.data.begin(), x.data.end(), out.data.begin() + i * rest);
    return g.record(OpKind::expand_leading, {v.id}, std::move(out));
}

Var channel_sum(Var a) {
    Graph& g = graph_of(a);
    const Shape& s = a.shape();
    if (s.size() != 4) throw ShapeError("channel_sum: expects [N,C,H,W], got " + to_string(s));
    const std::int64_t n = s[0], c = s[1], plane = s[2] * s[3];
    const Array& x = a.value();
    Array out(Shape{c});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t k = 0; k < c; ++k) {
            const double* p = x.data.data() + (i * c + k) * plane;
            double acc = 0.0;
            for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
            out.data[k] += acc;
        }
    }
    return g.record(OpKind::channel_sum, {a.id}, std::move(out));
}

Var expand_channel(Var v, Shape shape) {
    Graph& g = graph_of(v);
    if (shape.size() != 4 || v.shape() != Shape{shape[1]}) {
        throw ShapeError("expand_channel: vector " + to_string(v.shape()) + " does not match " + to_string(shape));
    }
    const std::int64_t n = shape[0], c = shape[1], plane = shape[2] * shape[3];
    const Array& x = v.value();
    Array out(std::move(shape));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t k = 0; k < c; ++k) {
            std::fill_n(out.data.begin() + (i * c + k) * plane, plane, x.data[k]);
        }
    }
    return g.record(OpKind::expand_channel, {v.id}, std::move(out));
}

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw ShapeError("matmul: shape mismatch " + to_string(sa) + " vs " + to_string(sb));
    }
    const std::int64_t n = sa[0], k = sa[1], m = sb[1];
    const double* x = a.value().data.data();
    const double* y = b.value().data.data();
    Array out(Shape{n, m});
    double* o = out.data.data();
    for (std::int64_t i = 0; i < n; ++i) {
        double* orow = o + i * m;
        for (std::int64_t t = 0; t < k; ++t) {
            const double av = x[i * k + t];
            const double* brow = y + t * m;
            for (std::int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return g.record(OpKind::matmul, {a.id, b.id}, std::move(out));
}

Var transpose(Var a) {
    Graph& g = graph_of(a);
    const Shape& s = a.shape();
    if (s.size() != 2) throw ShapeError("transpose: expects rank 2, got " + to_string(s));
    const std::int64_t r = s[0], c = s[1];
    const Array& x = a.value();
    Array out(Shape{c, r});
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out.data[j * r + i] = x.data[i * c + j];
    }
    return g.record(OpKind::transpose, {a.id}, std::move(out));
}

Var conv2d(Var x, Var w, int stride, int pad) {
    Graph& g = same_graph(x, w);
    const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
    Array out(conv_out_shape(d));
    conv_forward(d, x.value().data.data(), w.value().data.data(), out.data.data());
    OpAttrs attrs;
    attrs.conv = ConvGeometry{stride, pad, d.h, d.w};
    return g.record(OpKind::conv2d, {x.id, w.id}, std::move(out), std::move(attrs));
}

Var conv2d_input_grad(Var gout, Var w, const ConvGeometry& geom) {
    Graph& g = same_graph(gout, w);
    const Shape& gs = gout.shape();
    const Shape& ws = w.shape();
    if (gs.size() != 4 || ws.size() != 4 || gs[1] != ws[0]) {
        throw ShapeError("conv2d_input_grad: shape mismatch " + to_string(gs) + " vs " + to_string(ws));
    }
    const Shape xs{gs[0], ws[1], geom.in_h, geom.in_w};
    const ConvDims d = conv_dims(xs, ws, geom.stride, geom.pad);
    if (conv_out_shape(d) != gs) {
        throw ShapeError("conv2d_input_grad: gradient " + to_string(gs) + " does not match geometry");
    }
    Array out(xs);
    conv_input_grad(d, gout.value().data.data(), w.value().data.data(), out.data.data());
    OpAttrs attrs;
    attrs.conv = geom;
    return g.record(OpKind::conv2d_input_grad, {gout.id, w.id}, std::move(out), std::move(attrs));
}

Var conv2d_weight_grad(Var x, Var gout, const ConvGeometry& geom, const Shape& w_shape) {
    Graph& g = same_graph(x, gout);
    Shape ws = w_shape;
    const ConvDims d = conv_dims(x.shape(), ws, geom.stride, geom.pad);
    if (conv_out_shape(d) != gout.shape()) {
        throw ShapeError("conv2d_weight_grad: gradient " + to_string(gout.shape()) + " does not match geometry");
    }
    Array out(ws);
    conv_weight_grad(d, x.value().data.data(), gout.value().data.data(), out.data.data());
    OpAttrs attrs;
    attrs.conv = geom;
    attrs.shape = std::move(ws);
    return g.record(OpKind::conv2d_weight_grad, {x.id, gout.id}, std::move(out), std::move(attrs));
}

Var add_row_bias(Var x, Var b) {
    const Shape& s = x.shape();
    if (s.size() != 2 || b.shape() != Shape{s[1]}) {
        throw ShapeError("add_row_bias: shape mismatch " + to_string(s) + " vs " + to_string(b.shape()));
    }
    return add(x, expand_leading(b, s[0]));
}

Var add_channel_bias(Var x, Var b) {
    Shape s = x.shape();
    if (s.size() != 4 || b.shape() != Shape{s[1]}) {
        throw ShapeError("add_channel_bias: shape mismatch " + to_string(s) + " vs " + to_string(b.shape()));
    }
    return add(x, expand_channel(b, std::move(s)));
}

Var softmax(Var logits) {
    Graph& g = graph_of(logits);
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax: expects [N,K], got " + to_string(s));
    const std::int64_t n = s[0], k = s[1];
    const Array& z = logits.value();
    Array out(s);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = z.data.data() + i * k;
        double* o = out.data.data() + i * k;
        const double m = *std::max_element(row, row + k);
        double total = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            o[j] = std::exp(row[j] - m);
            total += o[j];
        }
        for (std::int64_t j = 0; j < k; ++j) o[j] /= total;
    }
    return g.record(OpKind::softmax, {logits.id}, std::move(out));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    Graph& g = graph_of(logits);
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax_cross_entropy: expects [N,K] logits, got " + to_string(s));
    const std::int64_t n = s[0], k = s[1];
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(s));
    }
    const Array& z = logits.value();
    Array out(Shape{n});
    for (std::int64_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= k) throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
        const double* row = z.data.data() + i * k;
        const double m = *std::max_element(row, row + k);
        double total = 0.0;
        for (std::int64_t j = 0; j < k; ++j) total += std::exp(row[j] - m);
        out.data[i] = m + std::log(total) - row[y];
    }
    OpAttrs attrs;
    attrs.labels.assign(labels.begin(), labels.end());
    return g.record(OpKind::softmax_xent, {logits.id}, std::move(out), std::move(attrs));
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var l2_norm(Var a) {
    Graph& g = graph_of(a);
    double s = 0.0;
    for (double v : a.value().data) s += v * v;
    return g.record(OpKind::l2_norm, {a.id}, Array::scalar(std::sqrt(s)));
}

Var cosine_rows(Var a, Var b) {
    Graph& g = same_graph(a, b);
    require_same_shape("cosine", a.shape(), b.shape());
    Var num = sum_trailing(mul(a, b));
    Var na = sum_trailing(mul(a, a));
    Var nb = sum_trailing(mul(b, b));
    Var den = sqrt(clamp_min(mul(na, nb), kCosineFloor * kCosineFloor));
    Var c = div(num, den);

    const Array& va = na.value();
    const Array& vb = nb.value();
    Array zero_mask(va.shape);
    bool any = false;
    for (std::size_t i = 0; i < va.data.size(); ++i) {
        if (va.data[i] == 0.0 && vb.data[i] == 0.0) {
            zero_mask.data[i] = 1.0;
            any = true;
        }
    }
    if (any) c = add(c, g.constant(std::move(zero_mask)));
    return c;
}

Var cosine(Var a, Var b) {
    const auto n = numel(a.shape());
    Var c = cosine_rows(reshape(a, Shape{1, n}), reshape(b, Shape{1, numel(b.shape())}));
    return reshape(c, Shape{});
}

namespace detail {

std::vector<std::optional<Var>> vjp(Graph& g, NodeId id, Var up, const std::vector<bool>& want) {
    const OpKind kind = g.node(id).kind;
    const std::vector<NodeId> in = g.node(id).inputs;
    const OpAttrs attrs = g.node(id).attrs;
    const Var self{&g, id};
    auto input = [&](std::size_t i) { return Var{&g, in.at(i)}; };
    auto pick = [&](std::size_t i, auto f) -> std::optional<Var> {
        if (!want.at(i)) return std::nullopt;
        return f();
    };

    switch (kind) {
        case OpKind::leaf:
        case OpKind::sign:
            return std::vector<std::optional<Var>>(in.size());
        case OpKind::add:
            return {up, up};
        case OpKind::sub:
            return {up, pick(1, [&] { return neg(up); })};
        case OpKind::mul:
            return {pick(0, [&] { return mul(up, input(1)); }), pick(1, [&] { return mul(up, input(0)); })};
        case OpKind::div:
            return {pick(0, [&] { return div(up, input(1)); }),
                    pick(1, [&] { return neg(div(mul(up, self), input(1))); })};
        case OpKind::scale:
            return {scale(up, attrs.a)};
        case OpKind::shift:
            return {up};
        case OpKind::relu: {
            Array mask = map_values(input(0).value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
            return {mul(up, g.constant(std::move(mask)))};
        }
        case OpKind::clamp: {
            const double lo = attrs.a, hi = attrs.b;
            Array mask = map_values(input(0).value(), [lo, hi](double v) { return v >= lo && v <= hi ? 1.0 : 0.0; });
            return {mul(up, g.constant(std::move(mask)))};
        }
        case OpKind::sqrt:
            return {div(scale(up, 0.5), self)};
        case OpKind::reshape:
            return {reshape(up, Shape(input(0).shape()))};
        case OpKind::sum_all:
            return {expand_scalar(up, Shape(input(0).shape()))};
        case OpKind::expand_scalar: {
            Var s = sum(up);
            Shape target = input(0).shape();
            if (target != Shape{}) s = reshape(s, std::move(target));
            return {s};
        }
        case OpKind::sum_trailing:
            return {expand_trailing(up, Shape(input(0).shape()))};
        case OpKind::expand_trailing:
            return {sum_trailing(up)};
        case OpKind::sum_leading:
            return {expand_leading(up, input(0).shape().at(0))};
        case OpKind::expand_leading:
            return {sum_leading(up)};
        case OpKind::channel_sum:
            return {expand_channel(up, Shape(input(0).shape()))};
        case OpKind::expand_channel:
            return {channel_sum(up)};
        case OpKind::matmul:
            return {pick(0, [&] { return matmul(up, transpose(input(1))); }),
                    pick(1, [&] { return matmul(transpose(input(0)), up); })};
        case OpKind::transpose:
            return {transpose(up)};
        case OpKind::conv2d: {
            Var x = input(0), w = input(1);
            Shape ws = w.shape();
            return {pick(0, [&] { return conv2d_input_grad(up, w, attrs.conv); }),
                    pick(1, [&] { return conv2d_weight_grad(x, up, attrs.conv, ws); })};
        }
        case OpKind::conv2d_input_grad: {
            // Output is the input-adjoint of conv(., w) applied to gout.
            Var gout = input(0), w = input(1);
            Shape ws = w.shape();
            return {pick(0, [&] { return conv2d(up, w, attrs.conv.stride, attrs.conv.pad); }),
                    pick(1, [&] { return conv2d_weight_grad(up, gout, attrs.conv, ws); })};
        }
        case OpKind::conv2d_weight_grad: {
            Var x = input(0), gout = input(1);
            return {pick(0, [&] { return conv2d_input_grad(gout, up, attrs.conv); }),
                    pick(1, [&] { return conv2d(x, up, attrs.conv.stride, attrs.conv.pad); })};
        }
        case OpKind::softmax: {
            Shape s = self.shape();
            Var inner = expand_trailing(sum_trailing(mul(up, self)), s);
            return {mul(self, sub(up, inner))};
        }
        case OpKind::softmax_xent: {
            Var logits = input(0);
            Shape s = logits.shape();
            Array onehot(s);
            const std::int64_t k = s[1];
            for (std::size_t i = 0; i < attrs.labels.size(); ++i) onehot.data[i * k + attrs.labels[i]] = 1.0;
            Var residual = sub(softmax(logits), g.constant(std::move(onehot)));
            return {mul(expand_trailing(up, std::move(s)), residual)};
        }
        case OpKind::l2_norm: {
            Var a = input(0);
            if (self.value().item() == 0.0) return {g.constant(Array(a.shape(), 0.0))};
            Var coef = div(up, self);
            return {mul(expand_scalar(coef, Shape(a.shape())), a)};
        }
    }
    throw std::logic_error("vjp: unhandled op");
}

}  // namespace detail

}  // namespace coat
