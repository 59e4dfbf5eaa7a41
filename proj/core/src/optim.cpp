#include "sanet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sanet {

double poly_lr(std::size_t iter, std::size_t max_iter, double base_lr, double power) {
    if (iter > max_iter) {
        throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " +
                                    std::to_string(max_iter));
    }
    if (max_iter == 0) return base_lr;
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
    return base_lr * std::pow(frac, power);
}

void adam_step(std::span<ParamRef> params, AdamState& state, double lr, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (const ParamRef& p : params) {
            state.m.emplace_back(p.value.size(), 0.0);
            state.v.emplace_back(p.value.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter count mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        ParamRef& p = params[k];
        std::vector<double>& m = state.m[k];
        std::vector<double>& v = state.v[k];
        if (m.size() != p.value.size() || p.grad.size() != p.value.size()) {
            throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double g = p.grad[i];
            if (!cfg.decoupled) g += cfg.weight_decay * p.value[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            double update = m_hat / (std::sqrt(v_hat) + cfg.eps);
            if (cfg.decoupled) update += cfg.weight_decay * p.value[i];
            p.value[i] -= lr * update;
        }
    }
}

}  // namespace sanet
