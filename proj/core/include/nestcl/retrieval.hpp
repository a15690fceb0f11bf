#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nestcl/model.hpp"
#include "nestcl/numerics.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

struct RetrievalPool {
    Matrix embeddings; // m x D, raw (not normalized; cosine queries)
    std::vector<std::string> ids;
    std::string kind; // "lesion" | "patient" | "lesion_image"
};

// The two independent tabular pools of the extrapolation scheme, plus the
// optional association data the I2I / I2L ablation variants need.
struct PoolSet {
    RetrievalPool lesion_meta;
    RetrievalPool patient_meta;
    std::optional<RetrievalPool> lesion_image;
    std::optional<std::vector<std::size_t>> lesion_owner; // lesion row -> patient row
};

// Embeds every lesion's metadata and every patient's metadata of the
// reference dataset. with_associations additionally keeps the image-embedding
// pool and the lesion->patient ownership map.
PoolSet build_pools(const Dataset& reference, const Model& model,
                    bool with_associations = true);

void save_pools(const PoolSet& pools, const std::filesystem::path& dir);
PoolSet load_pools(const std::filesystem::path& dir);

// Single-pool file pair: manifest.json (kind, rows, dim, ids, optional
// owner_rows) + pool.f32.
void save_pool(const RetrievalPool& pool, const std::filesystem::path& dir,
               const std::vector<std::size_t>* owner_rows = nullptr);
RetrievalPool load_pool(const std::filesystem::path& dir,
                        std::vector<std::size_t>* owner_rows = nullptr);

struct Hit {
    std::size_t index = 0;
    double score = 0.0;
};

// Exact top-k by cosine, ties broken by ascending pool index; k is clamped to
// the pool size.
std::vector<Hit> nearest(const RetrievalPool& pool, std::span<const double> query,
                         std::size_t k);

enum class ExtrapolationVariant { I2I, I2L, I2L2P };

ExtrapolationVariant parse_variant(const std::string& name); // throws ConfigError

struct Extrapolated {
    Vector lesion_meta;  // h-hat
    Vector patient_meta; // x-hat
};

// I2L2P: nearest lesion-meta row to w, fuse the single (w, h-hat) pair, then
// nearest patient-meta row to the fused vector. I2L: patient row owning the
// retrieved lesion. I2I: nearest reference lesion by image embedding, taking
// its own metadata rows.
Extrapolated extrapolate(std::span<const double> image_embedding, const PoolSet& pools,
                         const FusionParams& fusion, ExtrapolationVariant variant);

struct RecallEntry {
    std::size_t k = 0;
    double recall = 0.0;
};

std::vector<RecallEntry> recall_at_k(const Matrix& queries, const RetrievalPool& pool,
                                     const std::vector<std::string>& truth_ids,
                                     const std::vector<std::size_t>& ks);

// Nearest-rank percentiles of matched vs non-matched cosine similarity, plus
// fixed-width histogram densities (bin width 0.05 over [-1, 1]).
struct PercentileReport {
    std::vector<int> levels;      // {2, 10, 25, 50, 75, 90, 98}
    std::vector<double> matching;
    std::vector<double> non_matching;
};

struct SimilarityHistogram {
    std::vector<double> bin_left;            // 40 bins
    std::vector<double> matched_density;
    std::vector<double> non_matching_density;
};

struct DiagnosticsReport {
    PercentileReport percentiles;
    SimilarityHistogram histogram;
};

DiagnosticsReport similarity_diagnostics(const Matrix& image_embeddings,
                                         const Matrix& matched_meta_embeddings, Rng& rng,
                                         std::size_t n_neg);

double nearest_rank_percentile(std::vector<double> values, double level);

} // namespace nestcl
