#include "sanet/sam.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "sanet/rng.hpp"

namespace sanet {

void SamParams::zero_grads() {
    conv_a.zero_grads();
    conv_b.zero_grads();
}

SamParams sam_init(std::size_t channels, std::size_t h, std::size_t w, Rng& rng, double weight_std) {
    if (h < 2 || w < 2) {
        throw std::invalid_argument("sam_init: spatial size must be at least 2x2, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    if (channels == 0) throw std::invalid_argument("sam_init: channels must be >= 1");
    SamParams p;
    p.conv_a = ConvParams::make(2, channels, 3, 3, /*with_bias=*/false);
    p.conv_b = ConvParams::make(2, channels, 3, 3, /*with_bias=*/false);
    p.conv_a.weight = randn(p.conv_a.weight.shape(), 0.0, weight_std, rng);
    p.conv_b.weight = randn(p.conv_b.weight.shape(), 0.0, weight_std, rng);
    p.base_grid = identity_grid(1, h, w);
    return p;
}

std::pair<Tensor4, SamTape> sam_forward(const Tensor4& input, const SamParams& params) {
    const Shape& s = input.shape();
    if (s.c != params.channels() || s.h != params.height() || s.w != params.width()) {
        throw std::invalid_argument("sam_forward: input " + s.str() + " does not match module (" +
                                    std::to_string(params.channels()) + " channels, " +
                                    std::to_string(params.height()) + "x" +
                                    std::to_string(params.width()) + ")");
    }
    SamTape tape;
    auto [off_a, tape_a] = conv2d_forward(input, params.conv_a, 1, 1);
    auto [off_b, tape_b] = conv2d_forward(input, params.conv_b, 1, 1);

    Tensor4 unclamped = add(off_a, off_b);
    const std::size_t grid_plane = 2 * s.h * s.w;
    const auto base = params.base_grid.coords.data();
    for (std::size_t n = 0; n < s.n; ++n) {
        double* dst = unclamped.data().data() + n * grid_plane;
        for (std::size_t k = 0; k < grid_plane; ++k) dst[k] += base[k];
    }
    ResampleMap map{unclamped};
    for (double& v : map.coords.data()) v = std::clamp(v, -1.0, 1.0);

    auto [resampled, sample_tape] = bilinear_sample_forward(input, map);
    auto [gate, gate_tape] = sigmoid_forward(resampled);

    Tensor4 out = input;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += input[i] * gate[i];

    tape.input = input;
    tape.conv_a = std::move(tape_a);
    tape.conv_b = std::move(tape_b);
    tape.unclamped = std::move(unclamped);
    tape.map = std::move(map);
    tape.sample = std::move(sample_tape);
    tape.gate = std::move(gate_tape);
    return {std::move(out), std::move(tape)};
}

Tensor4 sam_backward(const Tensor4& grad_out, SamTape& tape, SamParams& params) {
    require_same_shape(grad_out.shape(), tape.input.shape(), "sam_backward");
    tape.consume("sam_backward");
    const Tensor4& x = tape.input;
    const Tensor4& z = tape.gate.output;

    // Residual and product terms: dT/dx = 1 + Z, dT/dZ = x.
    Tensor4 grad_in = grad_out;
    Tensor4 grad_gate(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        grad_in[i] *= 1.0 + z[i];
        grad_gate[i] = grad_out[i] * x[i];
    }

    const Tensor4 grad_resampled = sigmoid_backward(grad_gate, tape.gate);
    SampleGrads sg = bilinear_sample_backward(grad_resampled, tape.sample);
    grad_in = add(grad_in, sg.input);

    // Clamp passes gradient only where it was inactive.
    Tensor4& grad_offsets = sg.map;
    for (std::size_t i = 0; i < grad_offsets.numel(); ++i) {
        const double u = tape.unclamped[i];
        if (!(u > -1.0 && u < 1.0)) grad_offsets[i] = 0.0;
    }

    grad_in = add(grad_in, conv2d_backward(grad_offsets, tape.conv_a, params.conv_a));
    grad_in = add(grad_in, conv2d_backward(grad_offsets, tape.conv_b, params.conv_b));
    return grad_in;
}

}  // namespace sanet
