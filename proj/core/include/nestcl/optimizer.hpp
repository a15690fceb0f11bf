#pragma once

#include <cstdint>
#include <span>

namespace nestcl {

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One AdamW step (decoupled weight decay, bias-corrected moments) over a flat
// parameter vector. `step` is 1-based. Entries with mask == 0 are left
// untouched, including their moments.
void adamw_step(std::span<double> params, std::span<const double> grads,
                std::span<double> m1, std::span<double> m2, std::int64_t step,
                std::span<const std::uint8_t> mask, const OptimizerConfig& cfg);

} // namespace nestcl
