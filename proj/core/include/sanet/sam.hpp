#pragma once

#include <cstddef>
#include <utility>

#include "sanet/layers.hpp"

namespace sanet {

class Rng;

/// Standard deviation used to initialise the re-sampling convolutions.
inline constexpr double kSamInitStd = 0.001;

/// Scale-aware module parameters.
///
/// Two 3x3 re-sampling convolutions (C -> 2, no bias) predict per-pixel
/// offsets; their sum is added to a fixed identity grid sized for the module's
/// spatial extent.
struct SamParams {
    ConvParams conv_a;
    ConvParams conv_b;
    ResampleMap base_grid;  ///< shape (1, 2, H, W)

    std::size_t channels() const { return conv_a.c_in(); }
    std::size_t height() const { return base_grid.height(); }
    std::size_t width() const { return base_grid.width(); }
    std::size_t parameter_count() const { return conv_a.parameter_count() + conv_b.parameter_count(); }
    void zero_grads();
};

/// Draws both re-sampling kernels from N(0, weight_std^2). Requires h, w >= 2.
SamParams sam_init(std::size_t channels, std::size_t h, std::size_t w, Rng& rng,
                   double weight_std = kSamInitStd);

struct SamTape : Tape {
    Tensor4 input;
    ConvTape conv_a;
    ConvTape conv_b;
    Tensor4 unclamped;  ///< base grid + offsets before clamping
    ResampleMap map;    ///< clamped sampling map actually used
    SampleTape sample;
    SigmoidTape gate;
};

/// T = x + x * sigmoid(sample(x, clamp(base + conv_a(x) + conv_b(x), -1, 1))).
std::pair<Tensor4, SamTape> sam_forward(const Tensor4& input, const SamParams& params);

/// Input gradient through the residual, gate, sampling and offset paths.
/// Re-sampling kernel gradients accumulate into params.
Tensor4 sam_backward(const Tensor4& grad_out, SamTape& tape, SamParams& params);

}  // namespace sanet
