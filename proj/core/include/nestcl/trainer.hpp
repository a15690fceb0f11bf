#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "nestcl/checkpoint.hpp"
#include "nestcl/data.hpp"
#include "nestcl/loss.hpp"
#include "nestcl/model.hpp"
#include "nestcl/optimizer.hpp"
#include "nestcl/sampling.hpp"

namespace nestcl {

struct TrainConfig {
    std::size_t epochs = 150;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    SamplerConfig sampler;
    LossConfig loss;
    FreezeMode freeze_mode = FreezeMode::All;
    Architecture architecture = Architecture::Nested;
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
    OptimizerConfig optimizer() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double inner = 0.0;
    double outer = 0.0;
    double total = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

// Fresh model (seeded init, standardization fitted on `dataset`) trained for
// cfg.epochs full passes. Deterministic given (dataset, init_seed, cfg).
std::pair<ModelState, TrainHistory> pretrain(const Dataset& dataset, const ModelDims& dims,
                                             std::uint64_t init_seed, const TrainConfig& cfg);

// Runs cfg.epochs over `dataset` on an existing state (no re-initialization).
TrainHistory train(ModelState& state, const Dataset& dataset, const TrainConfig& cfg);

// Re-initializes the embedding layers (and standardization stats) for the
// target dataset's feature table, resets the optimizer, then trains with
// cfg.freeze_mode (embedding-only for the continual protocol). Encoder bodies
// and fusion parameters are carried over. cfg.epochs == 0 leaves the state
// untouched.
TrainHistory continual_pretrain(ModelState& state, const Dataset& target,
                                const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

} // namespace nestcl
