#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sanet/tensor.hpp"

namespace sanet {

class Rng;

/// Cached forward state for one layer call.
///
/// Every backward function consumes its tape exactly once; a second backward
/// on the same tape throws std::logic_error.
class Tape {
public:
    bool consumed() const { return consumed_; }
    void consume(const char* op);

private:
    bool consumed_ = false;
};

/// Convolution weights (C_out, C_in, k_h, k_w), optional bias, and gradient
/// buffers of matching shape. Gradients accumulate until zero_grads().
struct ConvParams {
    Tensor4 weight;
    Tensor4 grad_weight;
    std::vector<double> bias;
    std::vector<double> grad_bias;

    static ConvParams make(std::size_t c_out, std::size_t c_in, std::size_t k_h, std::size_t k_w,
                           bool with_bias = true);
    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    static ConvParams he_normal(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng,
                                bool with_bias = true);

    std::size_t c_out() const { return weight.shape().n; }
    std::size_t c_in() const { return weight.shape().c; }
    std::size_t k_h() const { return weight.shape().h; }
    std::size_t k_w() const { return weight.shape().w; }
    bool has_bias() const { return !bias.empty(); }
    std::size_t parameter_count() const { return weight.numel() + bias.size(); }

    void zero_grads();
};

// ---------------------------------------------------------------------------
// Convolution

struct ConvTape : Tape {
    Tensor4 input;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Shape out_shape;
};

/// out[n,co,y,x] = sum_{ci,i,j} W[co,ci,i,j] * in[n,ci,y*s+i-pad,x*s+j-pad] + b[co],
/// with zeros outside the input.
std::pair<Tensor4, ConvTape> conv2d_forward(const Tensor4& input, const ConvParams& params,
                                            std::size_t stride = 1, std::size_t padding = 0);

/// Returns the input gradient and accumulates weight/bias gradients into params.
Tensor4 conv2d_backward(const Tensor4& grad_out, ConvTape& tape, ConvParams& params);

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

struct ReluTape : Tape {
    Tensor4 input;
};

std::pair<Tensor4, ReluTape> relu_forward(const Tensor4& input);
Tensor4 relu_backward(const Tensor4& grad_out, ReluTape& tape);

struct SigmoidTape : Tape {
    Tensor4 output;
};

double sigmoid(double x);
std::pair<Tensor4, SigmoidTape> sigmoid_forward(const Tensor4& input);
Tensor4 sigmoid_backward(const Tensor4& grad_out, SigmoidTape& tape);

// ---------------------------------------------------------------------------
// Bilinear grid sampling

/// Per-pixel sampling coordinates, shape (n, 2, H, W). Channel 0 holds x, channel
/// 1 holds y, both normalized so that -1 is the first pixel centre and +1 the last.
struct ResampleMap {
    Tensor4 coords;

    std::size_t batch() const { return coords.shape().n; }
    std::size_t height() const { return coords.shape().h; }
    std::size_t width() const { return coords.shape().w; }
};

/// Identity grid: pixel (i, j) -> (2j/(W-1) - 1, 2i/(H-1) - 1). A unit axis maps to 0.
ResampleMap identity_grid(std::size_t n, std::size_t h, std::size_t w);

/// Normalized coordinate -> pixel coordinate, (u + 1) / 2 * (extent - 1).
double to_pixel(double u, std::size_t extent);

struct SampleTape : Tape {
    Tensor4 input;
    ResampleMap map;
};

/// out[n,c,i,j] = sum_q b(x_ij, q_x) b(y_ij, q_y) in[n,c,q], b(p,q) = max(0, 1 - |p - q|).
/// Neighbours outside the input contribute zero. Map entries must lie in [-1, 1].
std::pair<Tensor4, SampleTape> bilinear_sample_forward(const Tensor4& input, const ResampleMap& map);

struct SampleGrads {
    Tensor4 input;
    Tensor4 map;  ///< same shape as the map coords
};

SampleGrads bilinear_sample_backward(const Tensor4& grad_out, SampleTape& tape);

// ---------------------------------------------------------------------------
// Upsampling (align-corners bilinear)

struct UpsampleTape : Tape {
    Shape in_shape;
    Shape out_shape;
};

std::pair<Tensor4, UpsampleTape> upsample_bilinear(const Tensor4& input, std::size_t out_h,
                                                   std::size_t out_w);
Tensor4 upsample_bilinear_backward(const Tensor4& grad_out, UpsampleTape& tape);

// ---------------------------------------------------------------------------
// Loss

/// Integer class map of shape (n, h, w).
struct LabelMap {
    static constexpr std::int32_t kIgnore = 255;

    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t value = 0)
        : n(n_), h(h_), w(w_), data(n_ * h_ * w_, value) {}

    std::int32_t& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
    std::int32_t at(std::size_t b, std::size_t y, std::size_t x) const {
        return data[(b * h + y) * w + x];
    }
    bool operator==(const LabelMap&) const = default;
};

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor4 grad_logits;
    std::size_t counted = 0;  ///< non-ignored pixels
};

/// Mean over non-ignored pixels of -w[y] * log softmax(logits)[y].
CrossEntropyResult weighted_cross_entropy(const Tensor4& logits, const LabelMap& labels,
                                          std::span<const double> class_weights);

/// Per-pixel argmax over channels.
LabelMap argmax_channels(const Tensor4& logits);

}  // namespace sanet
