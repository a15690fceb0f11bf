#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestcl/model.hpp"
#include "nestcl/numerics.hpp"

namespace nestcl {

// Frozen per-lesion features (a concatenation of the selected modality
// embeddings) with labels. Rows with labeled == false are kept for scoring
// but excluded from any fitting.
struct FeatureSet {
    Matrix features;
    std::vector<int> labels;
    std::vector<bool> labeled;
    std::size_t num_classes = 2;

    std::size_t size() const { return features.rows; }
};

struct MetricsReport {
    double accuracy_pct = 0.0;
    double balanced_accuracy_pct = 0.0;
    double f1_binary = 0.0;   // NaN when undefined
    double f1_macro = 0.0;
    double f1_weighted = 0.0;
    double auc = 0.0;         // NaN when undefined
};

// labels/predictions aligned; scores has one column per class (binary may be
// n x 2). AUC is exact all-pairs concordance with ties counted 1/2; degenerate
// cases are NaN, never silently 0.
MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& predictions, const Matrix& scores,
                              std::size_t num_classes);

struct ProbeConfig {
    std::size_t epochs = 150;
    double learning_rate = 1e-2;
    double weight_decay = 0.0;
};

struct ProbeResult {
    Matrix weights;            // feature_dim x out_dim
    Vector bias;               // out_dim
    std::vector<int> predictions;
    Matrix scores;             // n_eval x num_classes
    MetricsReport metrics;
};

// Single linear layer trained full-batch with AdamW on the labeled train rows
// (BCE for binary, softmax cross-entropy for multiclass), evaluated on `eval`.
ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& eval,
                         const ProbeConfig& cfg);

struct KnnResult {
    std::vector<int> predictions;
    Matrix scores; // n_eval x num_classes, neighbor fractions
    MetricsReport metrics;
};

// Cosine-distance kNN majority vote over the labeled train rows; vote ties go
// to the smallest summed distance, then the lowest class index.
KnnResult knn_classify(const FeatureSet& train, const FeatureSet& eval, std::size_t k);

struct RankingReport {
    std::vector<std::size_t> ks;
    std::vector<double> recall_at;    // percent in [0,1]
    std::vector<double> ndcg_at;
    double mean_average_precision = 0.0;
    std::vector<std::size_t> rank_of_truth; // 1-based, per query
};

// Single-relevant-item definitions: R@k, NDCG@k = 1/log2(1+rank) when
// rank <= k, mAP = mean of 1/rank.
RankingReport ranking_metrics_from_ranks(const std::vector<std::size_t>& ranks,
                                         const std::vector<std::size_t>& ks);
RankingReport ranking_metrics(const std::vector<std::vector<std::size_t>>& ranked_ids,
                              const std::vector<std::size_t>& truth_ids,
                              const std::vector<std::size_t>& ks);

enum class CrossModalDirection { ImageToMeta, MetaToImage };

struct CrossModalReport {
    RankingReport ranking;
    std::vector<std::string> query_ids;
};

// Embeds the split with frozen encoders and ranks the opposite modality per
// query by exact cosine (ties by ascending index); truth is the aligned row.
CrossModalReport eval_crossmodal(const Model& model, const Dataset& dataset,
                                 CrossModalDirection direction,
                                 const std::vector<std::size_t>& ks);

} // namespace nestcl
