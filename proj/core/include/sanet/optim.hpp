#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sanet/network.hpp"

namespace sanet {

/// base_lr * (1 - iter / max_iter)^power. Requires iter <= max_iter; a zero
/// max_iter yields base_lr.
double poly_lr(std::size_t iter, std::size_t max_iter, double base_lr, double power);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 2e-4;
    /// Decoupled decay subtracts lr * wd * p after the Adam update; coupled
    /// decay adds wd * p to the gradient before the moments.
    bool decoupled = true;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its grad buffer.
/// State is lazily sized on the first call; later calls must see the same shapes.
void adam_step(std::span<ParamRef> params, AdamState& state, double lr, const AdamConfig& cfg);

}  // namespace sanet
