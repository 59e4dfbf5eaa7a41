#include "sanet/layers.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sanet/rng.hpp"

namespace sanet {

using Index = std::ptrdiff_t;

void Tape::consume(const char* op) {
    if (consumed_) throw std::logic_error(std::string(op) + ": tape already consumed by a backward call");
    consumed_ = true;
}

ConvParams ConvParams::make(std::size_t c_out, std::size_t c_in, std::size_t k_h, std::size_t k_w,
                            bool with_bias) {
    if (k_h % 2 == 0 || k_w % 2 == 0) {
        throw std::invalid_argument("ConvParams: kernel sizes must be odd");
    }
    ConvParams p;
    p.weight = zeros({c_out, c_in, k_h, k_w});
    p.grad_weight = zeros(p.weight.shape());
    if (with_bias) {
        p.bias.assign(c_out, 0.0);
        p.grad_bias.assign(c_out, 0.0);
    }
    return p;
}

ConvParams ConvParams::he_normal(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng,
                                 bool with_bias) {
    ConvParams p = make(c_out, c_in, k, k, with_bias);
    const double stddev = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
    p.weight = randn(p.weight.shape(), 0.0, stddev, rng);
    return p;
}

void ConvParams::zero_grads() {
    std::fill(grad_weight.data().begin(), grad_weight.data().end(), 0.0);
    std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

namespace {

// Output columns x in [lo, hi) with 0 <= x*stride + offset < extent.
struct Span1D {
    Index lo;
    Index hi;
};

Span1D valid_range(Index offset, Index stride, Index extent, Index out_extent) {
    Index lo = 0;
    if (offset < 0) lo = (-offset + stride - 1) / stride;
    const Index last = extent - 1 - offset;
    Index hi = last < 0 ? 0 : last / stride + 1;
    hi = std::min(hi, out_extent);
    return {lo, std::max(lo, hi)};
}

}  // namespace

std::pair<Tensor4, ConvTape> conv2d_forward(const Tensor4& input, const ConvParams& params,
                                            std::size_t stride, std::size_t padding) {
    const Shape& in = input.shape();
    if (in.c != params.c_in()) {
        throw std::invalid_argument("conv2d_forward: input has " + std::to_string(in.c) +
                                    " channels, weights expect " + std::to_string(params.c_in()));
    }
    if (stride == 0) throw std::invalid_argument("conv2d_forward: stride must be >= 1");
    const Index kh = static_cast<Index>(params.k_h());
    const Index kw = static_cast<Index>(params.k_w());
    const Index ph = static_cast<Index>(in.h + 2 * padding) - kh;
    const Index pw = static_cast<Index>(in.w + 2 * padding) - kw;
    if (ph < 0 || pw < 0) throw std::invalid_argument("conv2d_forward: non-positive output size");
    const Index s = static_cast<Index>(stride);
    const Index pad = static_cast<Index>(padding);
    const Shape out_shape{in.n, params.c_out(), static_cast<std::size_t>(ph / s + 1),
                          static_cast<std::size_t>(pw / s + 1)};
    Tensor4 out(out_shape);

    const Index n_planes = static_cast<Index>(in.n * params.c_out());
    const Index out_h = static_cast<Index>(out_shape.h);
    const Index out_w = static_cast<Index>(out_shape.w);
    const Index in_h = static_cast<Index>(in.h);
    const Index in_w = static_cast<Index>(in.w);

#pragma omp parallel for schedule(static)
    for (Index plane = 0; plane < n_planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / params.c_out();
        const std::size_t co = static_cast<std::size_t>(plane) % params.c_out();
        double* o = out.plane(n, co);
        const double b = params.has_bias() ? params.bias[co] : 0.0;
        std::fill(o, o + out_h * out_w, b);
        for (std::size_t ci = 0; ci < in.c; ++ci) {
            const double* src = input.plane(n, ci);
            for (Index i = 0; i < kh; ++i) {
                const Span1D rows = valid_range(i - pad, s, in_h, out_h);
                for (Index j = 0; j < kw; ++j) {
                    const double wv = params.weight.at(co, ci, static_cast<std::size_t>(i),
                                                       static_cast<std::size_t>(j));
                    const Span1D cols = valid_range(j - pad, s, in_w, out_w);
                    for (Index y = rows.lo; y < rows.hi; ++y) {
                        const double* src_row = src + (y * s + i - pad) * in_w + (j - pad);
                        double* out_row = o + y * out_w;
                        for (Index x = cols.lo; x < cols.hi; ++x) out_row[x] += wv * src_row[x * s];
                    }
                }
            }
        }
    }

    ConvTape tape;
    tape.input = input;
    tape.stride = stride;
    tape.padding = padding;
    tape.out_shape = out_shape;
    return {std::move(out), std::move(tape)};
}

Tensor4 conv2d_backward(const Tensor4& grad_out, ConvTape& tape, ConvParams& params) {
    require_same_shape(grad_out.shape(), tape.out_shape, "conv2d_backward");
    tape.consume("conv2d_backward");
    const Tensor4& input = tape.input;
    const Shape& in = input.shape();
    const Index kh = static_cast<Index>(params.k_h());
    const Index kw = static_cast<Index>(params.k_w());
    const Index s = static_cast<Index>(tape.stride);
    const Index pad = static_cast<Index>(tape.padding);
    const Index out_h = static_cast<Index>(tape.out_shape.h);
    const Index out_w = static_cast<Index>(tape.out_shape.w);
    const Index in_h = static_cast<Index>(in.h);
    const Index in_w = static_cast<Index>(in.w);
    const std::size_t c_out = params.c_out();

    // g(P) = sum K^T g(O), one (n, ci) plane per task.
    Tensor4 grad_in(in);
    const Index n_in_planes = static_cast<Index>(in.n * in.c);
#pragma omp parallel for schedule(static)
    for (Index plane = 0; plane < n_in_planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / in.c;
        const std::size_t ci = static_cast<std::size_t>(plane) % in.c;
        double* gi = grad_in.plane(n, ci);
        for (std::size_t co = 0; co < c_out; ++co) {
            const double* go = grad_out.plane(n, co);
            for (Index i = 0; i < kh; ++i) {
                const Span1D rows = valid_range(i - pad, s, in_h, out_h);
                for (Index j = 0; j < kw; ++j) {
                    const double wv = params.weight.at(co, ci, static_cast<std::size_t>(i),
                                                       static_cast<std::size_t>(j));
                    const Span1D cols = valid_range(j - pad, s, in_w, out_w);
                    for (Index y = rows.lo; y < rows.hi; ++y) {
                        double* gi_row = gi + (y * s + i - pad) * in_w + (j - pad);
                        const double* go_row = go + y * out_w;
                        for (Index x = cols.lo; x < cols.hi; ++x) gi_row[x * s] += wv * go_row[x];
                    }
                }
            }
        }
    }

    // g(K) = sum g(O) P^T and g(b) = sum g(O), one output channel per task.
#pragma omp parallel for schedule(static)
    for (Index co_i = 0; co_i < static_cast<Index>(c_out); ++co_i) {
        const std::size_t co = static_cast<std::size_t>(co_i);
        for (std::size_t ci = 0; ci < in.c; ++ci) {
            for (Index i = 0; i < kh; ++i) {
                const Span1D rows = valid_range(i - pad, s, in_h, out_h);
                for (Index j = 0; j < kw; ++j) {
                    const Span1D cols = valid_range(j - pad, s, in_w, out_w);
                    double acc = 0.0;
                    for (std::size_t n = 0; n < in.n; ++n) {
                        const double* src = input.plane(n, ci);
                        const double* go = grad_out.plane(n, co);
                        for (Index y = rows.lo; y < rows.hi; ++y) {
                            const double* src_row = src + (y * s + i - pad) * in_w + (j - pad);
                            const double* go_row = go + y * out_w;
                            for (Index x = cols.lo; x < cols.hi; ++x) acc += go_row[x] * src_row[x * s];
                        }
                    }
                    params.grad_weight.at(co, ci, static_cast<std::size_t>(i),
                                          static_cast<std::size_t>(j)) += acc;
                }
            }
        }
        if (params.has_bias()) {
            double acc = 0.0;
            for (std::size_t n = 0; n < in.n; ++n) {
                const double* go = grad_out.plane(n, co);
                for (Index k = 0; k < out_h * out_w; ++k) acc += go[k];
            }
            params.grad_bias[co] += acc;
        }
    }
    return grad_in;
}

std::pair<Tensor4, ReluTape> relu_forward(const Tensor4& input) {
    Tensor4 out = input;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    ReluTape tape;
    tape.input = input;
    return {std::move(out), std::move(tape)};
}

Tensor4 relu_backward(const Tensor4& grad_out, ReluTape& tape) {
    require_same_shape(grad_out.shape(), tape.input.shape(), "relu_backward");
    tape.consume("relu_backward");
    Tensor4 g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        if (!(tape.input[i] > 0.0)) g[i] = 0.0;
    }
    return g;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::pair<Tensor4, SigmoidTape> sigmoid_forward(const Tensor4& input) {
    Tensor4 out = input;
    for (double& v : out.data()) v = sigmoid(v);
    SigmoidTape tape;
    tape.output = out;
    return {std::move(out), std::move(tape)};
}

Tensor4 sigmoid_backward(const Tensor4& grad_out, SigmoidTape& tape) {
    require_same_shape(grad_out.shape(), tape.output.shape(), "sigmoid_backward");
    tape.consume("sigmoid_backward");
    Tensor4 g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const double z = tape.output[i];
        g[i] *= z * (1.0 - z);
    }
    return g;
}

ResampleMap identity_grid(std::size_t n, std::size_t h, std::size_t w) {
    ResampleMap map{zeros({n, 2, h, w})};
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                map.coords.at(b, 0, i, j) =
                    w > 1 ? 2.0 * static_cast<double>(j) / static_cast<double>(w - 1) - 1.0 : 0.0;
                map.coords.at(b, 1, i, j) =
                    h > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(h - 1) - 1.0 : 0.0;
            }
        }
    }
    return map;
}

double to_pixel(double u, std::size_t extent) {
    if (extent <= 1) return 0.0;
    const double span = static_cast<double>(extent - 1);
    double p = (u + 1.0) * 0.5 * span;
    // The identity grid is not exactly representable; snap rounding residue so
    // that grid points land on pixel centres.
    const double r = std::round(p);
    if (std::abs(p - r) <= 8.0 * DBL_EPSILON * span) p = r;
    return p;
}

namespace {

struct Corner {
    Index x0;
    Index y0;
    double fx;
    double fy;
};

Corner locate(double u, double v, std::size_t w, std::size_t h) {
    const double px = to_pixel(u, w);
    const double py = to_pixel(v, h);
    const double fx0 = std::floor(px);
    const double fy0 = std::floor(py);
    return {static_cast<Index>(fx0), static_cast<Index>(fy0), px - fx0, py - fy0};
}

}  // namespace

std::pair<Tensor4, SampleTape> bilinear_sample_forward(const Tensor4& input, const ResampleMap& map) {
    const Shape& in = input.shape();
    const Shape& ms = map.coords.shape();
    if (ms.c != 2) throw std::invalid_argument("bilinear_sample_forward: map must have 2 channels");
    if (ms.n != in.n || ms.h != in.h || ms.w != in.w) {
        throw std::invalid_argument("bilinear_sample_forward: map " + ms.str() +
                                    " does not match input " + in.str());
    }
    for (double v : map.coords.data()) {
        if (!(v >= -1.0 && v <= 1.0)) {
            throw std::invalid_argument("bilinear_sample_forward: map entry outside [-1, 1]");
        }
    }
    const Index H = static_cast<Index>(in.h);
    const Index W = static_cast<Index>(in.w);
    Tensor4 out(in);

#pragma omp parallel for schedule(static)
    for (Index n_i = 0; n_i < static_cast<Index>(in.n); ++n_i) {
        const std::size_t n = static_cast<std::size_t>(n_i);
        for (Index i = 0; i < H; ++i) {
            for (Index j = 0; j < W; ++j) {
                const auto ui = static_cast<std::size_t>(i);
                const auto uj = static_cast<std::size_t>(j);
                const Corner k = locate(map.coords.at(n, 0, ui, uj), map.coords.at(n, 1, ui, uj),
                                        in.w, in.h);
                const Index xs[2] = {k.x0, k.x0 + 1};
                const Index ys[2] = {k.y0, k.y0 + 1};
                const double wx[2] = {1.0 - k.fx, k.fx};
                const double wy[2] = {1.0 - k.fy, k.fy};
                for (std::size_t c = 0; c < in.c; ++c) {
                    const double* src = input.plane(n, c);
                    double acc = 0.0;
                    for (int a = 0; a < 2; ++a) {
                        if (ys[a] < 0 || ys[a] >= H) continue;
                        for (int b = 0; b < 2; ++b) {
                            if (xs[b] < 0 || xs[b] >= W) continue;
                            acc += wy[a] * wx[b] * src[ys[a] * W + xs[b]];
                        }
                    }
                    out.at(n, c, ui, uj) = acc;
                }
            }
        }
    }

    SampleTape tape;
    tape.input = input;
    tape.map = map;
    return {std::move(out), std::move(tape)};
}

SampleGrads bilinear_sample_backward(const Tensor4& grad_out, SampleTape& tape) {
    require_same_shape(grad_out.shape(), tape.input.shape(), "bilinear_sample_backward");
    tape.consume("bilinear_sample_backward");
    const Tensor4& input = tape.input;
    const Tensor4& coords = tape.map.coords;
    const Shape& in = input.shape();
    const Index H = static_cast<Index>(in.h);
    const Index W = static_cast<Index>(in.w);
    // d(pixel)/d(normalized) for each axis.
    const double jac_x = in.w > 1 ? 0.5 * static_cast<double>(in.w - 1) : 0.0;
    const double jac_y = in.h > 1 ? 0.5 * static_cast<double>(in.h - 1) : 0.0;

    SampleGrads g{zeros(in), zeros(coords.shape())};

#pragma omp parallel for schedule(static)
    for (Index n_i = 0; n_i < static_cast<Index>(in.n); ++n_i) {
        const std::size_t n = static_cast<std::size_t>(n_i);
        for (Index i = 0; i < H; ++i) {
            for (Index j = 0; j < W; ++j) {
                const auto ui = static_cast<std::size_t>(i);
                const auto uj = static_cast<std::size_t>(j);
                const Corner k = locate(coords.at(n, 0, ui, uj), coords.at(n, 1, ui, uj), in.w, in.h);
                const Index xs[2] = {k.x0, k.x0 + 1};
                const Index ys[2] = {k.y0, k.y0 + 1};
                const double wx[2] = {1.0 - k.fx, k.fx};
                const double wy[2] = {1.0 - k.fy, k.fy};
                // Derivative of b(x, q) = max(0, 1 - |x - q|) w.r.t. x:
                // -1 for the left neighbour (x > q), +1 for the right one (x < q).
                const double dwx[2] = {-1.0, 1.0};
                const double dwy[2] = {-1.0, 1.0};
                double gx = 0.0;
                double gy = 0.0;
                for (std::size_t c = 0; c < in.c; ++c) {
                    const double go = grad_out.at(n, c, ui, uj);
                    if (go == 0.0) continue;
                    const double* src = input.plane(n, c);
                    double* gin = g.input.plane(n, c);
                    for (int a = 0; a < 2; ++a) {
                        if (ys[a] < 0 || ys[a] >= H) continue;
                        for (int b = 0; b < 2; ++b) {
                            if (xs[b] < 0 || xs[b] >= W) continue;
                            const Index q = ys[a] * W + xs[b];
                            gin[q] += wy[a] * wx[b] * go;
                            gx += go * src[q] * wy[a] * dwx[b];
                            gy += go * src[q] * dwy[a] * wx[b];
                        }
                    }
                }
                g.map.at(n, 0, ui, uj) = gx * jac_x;
                g.map.at(n, 1, ui, uj) = gy * jac_y;
            }
        }
    }
    return g;
}

namespace {

struct Interp {
    std::size_t i0;
    std::size_t i1;
    double f;
};

std::vector<Interp> align_corners_table(std::size_t in, std::size_t out) {
    std::vector<Interp> table(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = 0.0;
        if (out > 1 && in > 1) {
            src = static_cast<double>(o * (in - 1)) / static_cast<double>(out - 1);
        }
        auto i0 = static_cast<std::size_t>(std::floor(src));
        i0 = std::min(i0, in - 1);
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        table[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return table;
}

}  // namespace

std::pair<Tensor4, UpsampleTape> upsample_bilinear(const Tensor4& input, std::size_t out_h,
                                                   std::size_t out_w) {
    const Shape& in = input.shape();
    if (out_h < in.h || out_w < in.w) {
        throw std::invalid_argument("upsample_bilinear: requested size " + std::to_string(out_h) +
                                    "x" + std::to_string(out_w) + " shrinks input " + in.str());
    }
    const Shape out_shape{in.n, in.c, out_h, out_w};
    Tensor4 out(out_shape);
    const auto rows = align_corners_table(in.h, out_h);
    const auto cols = align_corners_table(in.w, out_w);
    const Index planes = static_cast<Index>(in.n * in.c);

#pragma omp parallel for schedule(static)
    for (Index p = 0; p < planes; ++p) {
        const double* src = input.data().data() + static_cast<std::size_t>(p) * in.plane();
        double* dst = out.data().data() + static_cast<std::size_t>(p) * out_shape.plane();
        for (std::size_t y = 0; y < out_h; ++y) {
            const Interp& r = rows[y];
            const double* top = src + r.i0 * in.w;
            const double* bot = src + r.i1 * in.w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const Interp& c = cols[x];
                const double t = (1.0 - c.f) * top[c.i0] + c.f * top[c.i1];
                const double b = (1.0 - c.f) * bot[c.i0] + c.f * bot[c.i1];
                dst[y * out_w + x] = (1.0 - r.f) * t + r.f * b;
            }
        }
    }
    UpsampleTape tape;
    tape.in_shape = in;
    tape.out_shape = out_shape;
    return {std::move(out), std::move(tape)};
}

Tensor4 upsample_bilinear_backward(const Tensor4& grad_out, UpsampleTape& tape) {
    require_same_shape(grad_out.shape(), tape.out_shape, "upsample_bilinear_backward");
    tape.consume("upsample_bilinear_backward");
    const Shape& in = tape.in_shape;
    const Shape& os = tape.out_shape;
    Tensor4 grad_in(in);
    const auto rows = align_corners_table(in.h, os.h);
    const auto cols = align_corners_table(in.w, os.w);
    const Index planes = static_cast<Index>(in.n * in.c);

#pragma omp parallel for schedule(static)
    for (Index p = 0; p < planes; ++p) {
        const double* go = grad_out.data().data() + static_cast<std::size_t>(p) * os.plane();
        double* gi = grad_in.data().data() + static_cast<std::size_t>(p) * in.plane();
        for (std::size_t y = 0; y < os.h; ++y) {
            const Interp& r = rows[y];
            double* top = gi + r.i0 * in.w;
            double* bot = gi + r.i1 * in.w;
            for (std::size_t x = 0; x < os.w; ++x) {
                const Interp& c = cols[x];
                const double g = go[y * os.w + x];
                top[c.i0] += (1.0 - r.f) * (1.0 - c.f) * g;
                top[c.i1] += (1.0 - r.f) * c.f * g;
                bot[c.i0] += r.f * (1.0 - c.f) * g;
                bot[c.i1] += r.f * c.f * g;
            }
        }
    }
    return grad_in;
}

CrossEntropyResult weighted_cross_entropy(const Tensor4& logits, const LabelMap& labels,
                                          std::span<const double> class_weights) {
    const Shape& s = logits.shape();
    if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
        throw std::invalid_argument("weighted_cross_entropy: labels do not match logits " + s.str());
    }
    if (class_weights.size() != s.c) {
        throw std::invalid_argument("weighted_cross_entropy: expected " + std::to_string(s.c) +
                                    " class weights");
    }
    for (double w : class_weights) {
        if (!(w > 0.0)) throw std::invalid_argument("weighted_cross_entropy: weights must be > 0");
    }

    CrossEntropyResult result;
    result.grad_logits = zeros(s);
    const auto K = static_cast<std::int32_t>(s.c);
    for (std::int32_t y : labels.data) {
        if (y == LabelMap::kIgnore) continue;
        if (y < 0 || y >= K) {
            throw std::invalid_argument("weighted_cross_entropy: label " + std::to_string(y) +
                                        " out of range");
        }
        ++result.counted;
    }
    if (result.counted == 0) return result;

    const double inv_count = 1.0 / static_cast<double>(result.counted);
    std::vector<double> prob(s.c);
    double total = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                const std::int32_t y = labels.at(n, i, j);
                if (y == LabelMap::kIgnore) continue;
                double m = logits.at(n, 0, i, j);
                for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, logits.at(n, c, i, j));
                double z = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    prob[c] = std::exp(logits.at(n, c, i, j) - m);
                    z += prob[c];
                }
                const auto yc = static_cast<std::size_t>(y);
                const double w = class_weights[yc];
                const double log_p = logits.at(n, yc, i, j) - m - std::log(z);
                total -= w * log_p;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double p = prob[c] / z;
                    result.grad_logits.at(n, c, i, j) = w * (p - (c == yc ? 1.0 : 0.0)) * inv_count;
                }
            }
        }
    }
    result.loss = total * inv_count;
    return result;
}

LabelMap argmax_channels(const Tensor4& logits) {
    const Shape& s = logits.shape();
    LabelMap out(s.n, s.h, s.w);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < s.c; ++c) {
                    if (logits.at(n, c, i, j) > logits.at(n, best, i, j)) best = c;
                }
                out.at(n, i, j) = static_cast<std::int32_t>(best);
            }
        }
    }
    return out;
}

}  // namespace sanet
