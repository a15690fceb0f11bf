#pragma once

#include <cstdint>
#include <vector>

#include "nestcl/data.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

struct SamplerConfig {
    std::size_t batch_patients = 4;  // B
    std::size_t max_lesions = 100;   // N_max
    bool positive_sampling = true;
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

struct PatientSelection {
    std::size_t patient = 0;               // dataset patient index
    std::vector<std::size_t> lesions;      // unique, ascending
};

using Batch = std::vector<PatientSelection>;

// All lesions when N_p <= max; otherwise a random subset. With positive
// sampling the malignant lesions are always kept (truncated uniformly only
// when they alone exceed the cap).
std::vector<std::size_t> select_lesions(const PatientRecord& patient, std::size_t max_lesions,
                                        bool positive_sampling, Rng& rng);

// Patients shuffled and chunked into groups of B (final short group kept);
// deterministic given (cfg.seed, epoch).
std::vector<Batch> sample_epoch(const Dataset& dataset, const SamplerConfig& cfg,
                                std::uint64_t epoch);

} // namespace nestcl
