#include "nestcl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "nestcl/dataset_io.hpp"
#include "nestcl/errors.hpp"

namespace nestcl {

namespace fs = std::filesystem;
using nlohmann::json;

PoolSet build_pools(const Dataset& reference, const Model& model, bool with_associations) {
    if (!model.nested()) throw ConfigError("pools require a nested model");
    const DatasetEmbeddings emb = embed_dataset(model, reference);

    PoolSet pools;
    pools.lesion_meta.kind = "lesion";
    pools.lesion_meta.embeddings = emb.lesion_meta;
    pools.lesion_meta.ids = emb.lesion_ids;

    pools.patient_meta.kind = "patient";
    pools.patient_meta.embeddings = emb.patient_rows;
    pools.patient_meta.ids = emb.patient_ids;

    if (with_associations) {
        RetrievalPool image_pool;
        image_pool.kind = "lesion_image";
        image_pool.embeddings = emb.image;
        image_pool.ids = emb.lesion_ids;
        pools.lesion_image = std::move(image_pool);
        pools.lesion_owner = emb.lesion_owner;
    }
    return pools;
}

void save_pool(const RetrievalPool& pool, const fs::path& dir,
               const std::vector<std::size_t>* owner) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = pool.kind;
    manifest["rows"] = pool.embeddings.rows;
    manifest["dim"] = pool.embeddings.cols;
    manifest["ids"] = pool.ids;
    if (owner) manifest["owner_rows"] = *owner;
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    std::vector<float> data(pool.embeddings.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<float>(pool.embeddings.data[i]);
    write_f32_atomic(dir / "pool.f32", data);
}

RetrievalPool load_pool(const fs::path& dir, std::vector<std::size_t>* owner) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IngestError(dir.string() + "/manifest.json: " + std::string(e.what()));
    }
    RetrievalPool pool;
    try {
        pool.kind = manifest.at("kind").get<std::string>();
        const auto rows = manifest.at("rows").get<std::size_t>();
        const auto dim = manifest.at("dim").get<std::size_t>();
        pool.ids = manifest.at("ids").get<std::vector<std::string>>();
        if (pool.ids.size() != rows) throw IngestError("pool id count mismatch in " + dir.string());
        const auto data = read_f32(dir / "pool.f32");
        if (data.size() != rows * dim)
            throw IngestError("pool.f32 size mismatch in " + dir.string());
        pool.embeddings = Matrix(rows, dim);
        for (std::size_t i = 0; i < data.size(); ++i)
            pool.embeddings.data[i] = static_cast<double>(data[i]);
        if (owner && manifest.contains("owner_rows")) {
            *owner = manifest.at("owner_rows").get<std::vector<std::size_t>>();
            if (owner->size() != rows)
                throw IngestError("owner_rows size mismatch in " + dir.string());
        }
    } catch (const json::exception& e) {
        throw IngestError(dir.string() + "/manifest.json: " + std::string(e.what()));
    }
    return pool;
}

void save_pools(const PoolSet& pools, const fs::path& dir) {
    fs::create_directories(dir);
    save_pool(pools.lesion_meta, dir / "lesion_meta",
              pools.lesion_owner ? &*pools.lesion_owner : nullptr);
    save_pool(pools.patient_meta, dir / "patient_meta", nullptr);
    if (pools.lesion_image) save_pool(*pools.lesion_image, dir / "lesion_image", nullptr);
}

PoolSet load_pools(const fs::path& dir) {
    PoolSet pools;
    std::vector<std::size_t> owner;
    pools.lesion_meta = load_pool(dir / "lesion_meta", &owner);
    pools.patient_meta = load_pool(dir / "patient_meta", nullptr);
    if (!owner.empty()) {
        for (const std::size_t row : owner) {
            if (row >= pools.patient_meta.embeddings.rows)
                throw IngestError("owner_rows entry out of range");
        }
        pools.lesion_owner = std::move(owner);
    }
    if (fs::exists(dir / "lesion_image")) {
        pools.lesion_image = load_pool(dir / "lesion_image", nullptr);
    }
    return pools;
}

std::vector<Hit> nearest(const RetrievalPool& pool, std::span<const double> query,
                         std::size_t k) {
    const std::size_t m = pool.embeddings.rows;
    if (m == 0) throw EvalError("nearest on an empty pool");
    if (k < 1) throw EvalError("nearest needs k >= 1");
    k = std::min(k, m);

    std::vector<Hit> hits(m);
    for (std::size_t i = 0; i < m; ++i) {
        hits[i] = {i, cosine_sim(query, pool.embeddings.row(i))};
    }
    auto better = [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    };
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                      better);
    hits.resize(k);
    return hits;
}

ExtrapolationVariant parse_variant(const std::string& name) {
    if (name == "I2I") return ExtrapolationVariant::I2I;
    if (name == "I2L") return ExtrapolationVariant::I2L;
    if (name == "I2L2P") return ExtrapolationVariant::I2L2P;
    throw ConfigError("unknown extrapolation variant '" + name + "' (I2I, I2L, I2L2P)");
}

Extrapolated extrapolate(std::span<const double> image_embedding, const PoolSet& pools,
                         const FusionParams& fusion, ExtrapolationVariant variant) {
    Extrapolated out;
    const auto row_copy = [](const Matrix& m, std::size_t i) {
        const auto r = m.row(i);
        return Vector(r.begin(), r.end());
    };

    if (variant == ExtrapolationVariant::I2I) {
        if (!pools.lesion_image || !pools.lesion_owner)
            throw ConfigError("I2I needs the image pool and the ownership map");
        const Hit hit = nearest(*pools.lesion_image, image_embedding, 1)[0];
        out.lesion_meta = row_copy(pools.lesion_meta.embeddings, hit.index);
        out.patient_meta =
            row_copy(pools.patient_meta.embeddings, (*pools.lesion_owner)[hit.index]);
        return out;
    }

    const Hit lesion_hit = nearest(pools.lesion_meta, image_embedding, 1)[0];
    out.lesion_meta = row_copy(pools.lesion_meta.embeddings, lesion_hit.index);

    if (variant == ExtrapolationVariant::I2L) {
        if (!pools.lesion_owner) throw ConfigError("I2L needs the ownership map");
        out.patient_meta =
            row_copy(pools.patient_meta.embeddings, (*pools.lesion_owner)[lesion_hit.index]);
        return out;
    }

    // I2L2P: fuse the single (w, h-hat) pair, then retrieve the patient row.
    const std::size_t d = fusion.weight.cols;
    Matrix w_rows(1, d), h_rows(1, d);
    for (std::size_t c = 0; c < d; ++c) {
        w_rows(0, c) = image_embedding[c];
        h_rows(0, c) = out.lesion_meta[c];
    }
    const Vector fused = fuse_patient(w_rows, h_rows, fusion);
    const Hit patient_hit = nearest(pools.patient_meta, fused, 1)[0];
    out.patient_meta = row_copy(pools.patient_meta.embeddings, patient_hit.index);
    return out;
}

std::vector<RecallEntry> recall_at_k(const Matrix& queries, const RetrievalPool& pool,
                                     const std::vector<std::string>& truth_ids,
                                     const std::vector<std::size_t>& ks) {
    if (queries.rows != truth_ids.size())
        throw EvalError("recall_at_k: one truth id per query required");
    if (queries.rows == 0) throw EvalError("recall_at_k: no queries");

    std::map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < pool.ids.size(); ++i) index_of.emplace(pool.ids[i], i);

    std::vector<std::size_t> ranks(queries.rows);
    for (std::size_t q = 0; q < queries.rows; ++q) {
        const auto it = index_of.find(truth_ids[q]);
        if (it == index_of.end())
            throw EvalError("truth id '" + truth_ids[q] + "' not in pool");
        const std::size_t truth_row = it->second;
        const auto query = queries.row(q);
        const double truth_score = cosine_sim(query, pool.embeddings.row(truth_row));
        std::size_t rank = 1;
        for (std::size_t i = 0; i < pool.embeddings.rows; ++i) {
            if (i == truth_row) continue;
            const double s = cosine_sim(query, pool.embeddings.row(i));
            if (s > truth_score || (s == truth_score && i < truth_row)) ++rank;
        }
        ranks[q] = rank;
    }

    std::vector<RecallEntry> table;
    for (const std::size_t k : ks) {
        std::size_t hitcount = 0;
        for (const std::size_t r : ranks) {
            if (r <= k) ++hitcount;
        }
        table.push_back({k, static_cast<double>(hitcount) / static_cast<double>(ranks.size())});
    }
    return table;
}

double nearest_rank_percentile(std::vector<double> values, double level) {
    if (values.empty()) throw EvalError("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(level / 100.0 * n));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

DiagnosticsReport similarity_diagnostics(const Matrix& image_embeddings,
                                         const Matrix& matched_meta_embeddings, Rng& rng,
                                         std::size_t n_neg) {
    if (!image_embeddings.same_shape(matched_meta_embeddings))
        throw EvalError("diagnostics need aligned matched pairs");
    const std::size_t n = image_embeddings.rows;
    if (n < 2) throw EvalError("diagnostics need at least 2 samples");
    if (n_neg < 1) throw EvalError("diagnostics need n_neg >= 1");

    std::vector<double> matched(n);
    for (std::size_t i = 0; i < n; ++i) {
        matched[i] = cosine_sim(image_embeddings.row(i), matched_meta_embeddings.row(i));
    }

    std::vector<double> negatives;
    negatives.reserve(n * n_neg);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t draw = 0; draw < n_neg; ++draw) {
            std::size_t j = static_cast<std::size_t>(rng.below(n - 1));
            if (j >= i) ++j; // uniform over non-matching rows
            negatives.push_back(
                cosine_sim(image_embeddings.row(i), matched_meta_embeddings.row(j)));
        }
    }

    DiagnosticsReport report;
    report.percentiles.levels = {2, 10, 25, 50, 75, 90, 98};
    for (const int level : report.percentiles.levels) {
        report.percentiles.matching.push_back(nearest_rank_percentile(matched, level));
        report.percentiles.non_matching.push_back(nearest_rank_percentile(negatives, level));
    }

    constexpr double kBinWidth = 0.05;
    constexpr std::size_t kBins = 40;
    report.histogram.bin_left.resize(kBins);
    report.histogram.matched_density.assign(kBins, 0.0);
    report.histogram.non_matching_density.assign(kBins, 0.0);
    for (std::size_t b = 0; b < kBins; ++b) {
        report.histogram.bin_left[b] = -1.0 + kBinWidth * static_cast<double>(b);
    }
    auto bin_of = [&](double value) {
        auto b = static_cast<std::ptrdiff_t>(std::floor((value + 1.0) / kBinWidth));
        if (b < 0) b = 0;
        if (b >= static_cast<std::ptrdiff_t>(kBins)) b = kBins - 1;
        return static_cast<std::size_t>(b);
    };
    for (const double v : matched) report.histogram.matched_density[bin_of(v)] += 1.0;
    for (const double v : negatives) report.histogram.non_matching_density[bin_of(v)] += 1.0;
    for (std::size_t b = 0; b < kBins; ++b) {
        report.histogram.matched_density[b] /= static_cast<double>(matched.size()) * kBinWidth;
        report.histogram.non_matching_density[b] /=
            static_cast<double>(negatives.size()) * kBinWidth;
    }
    return report;
}

} // namespace nestcl
