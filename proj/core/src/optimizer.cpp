#include "nestcl/optimizer.hpp"

#include <cmath>
#include <string>

#include "nestcl/errors.hpp"

namespace nestcl {

void adamw_step(std::span<double> params, std::span<const double> grads,
                std::span<double> m1, std::span<double> m2, std::int64_t step,
                std::span<const std::uint8_t> mask, const OptimizerConfig& cfg) {
    const std::size_t n = params.size();
    if (grads.size() != n || m1.size() != n || m2.size() != n || mask.size() != n)
        throw ShapeError("adamw_step: vector lengths differ (" + std::to_string(n) + ")");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double g = grads[i];
        m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
        m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m1[i] / bc1;
        const double v_hat = m2[i] / bc2;
        params[i] -= cfg.learning_rate *
                     (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
    }
}

} // namespace nestcl
