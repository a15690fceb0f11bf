#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <string_view>
#include <vector>

namespace nestcl {

// xoshiro256++ with splitmix64 seeding. Every random decision in the library
// goes through this generator so that runs are bit-reproducible across
// platforms; std:: distributions are implementation-defined and never used.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [0, n), n >= 1 (rejection sampling).
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; pairs are consumed in a fixed order.
    double normal();

    // Fisher-Yates, descending index order.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(items[i], items[j]);
        }
    }

    // k distinct indices drawn uniformly from [0, n) (partial Fisher-Yates),
    // returned in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::array<std::uint64_t, 4> m_state{};
    double m_spare = 0.0;
    bool m_has_spare = false;
};

// 64-bit FNV-1a, used to derive per-stage sub-seeds: seed ^ fnv1a64(tag).
std::uint64_t fnv1a64(std::string_view text);

// splitmix64 finalizer over (base ^ (salt * golden-ratio)); used to derive
// per-epoch sampler streams.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

} // namespace nestcl
