// Test-only reference implementations, kept independent of the library code
// paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "nestcl/numerics.hpp"

namespace oracles {

// All-pairs AUC with ties counted 1/2 (O(n^2)).
inline double auc_pairs(const std::vector<int>& labels, const std::vector<double>& scores) {
    std::size_t n_pos = 0, n_neg = 0;
    double concordant = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] == 1) continue;
            if (scores[i] > scores[j]) {
                concordant += 1.0;
            } else if (scores[i] == scores[j]) {
                concordant += 0.5;
            }
        }
    }
    for (const int y : labels) {
        if (y != 1) ++n_neg;
    }
    return concordant / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct ClassificationOracle {
    double accuracy_pct;
    double balanced_accuracy_pct;
    double f1_binary;
    double f1_macro;
    double f1_weighted;
};

inline ClassificationOracle classification_metrics(const std::vector<int>& labels,
                                                   const std::vector<int>& preds,
                                                   std::size_t num_classes) {
    const auto n = static_cast<double>(labels.size());
    double correct = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == preds[i]) correct += 1.0;
    }
    double recall_sum = 0.0, macro = 0.0, weighted = 0.0, f1_bin = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        double tp = 0.0, fp = 0.0, fn = 0.0, support = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const bool is_c = labels[i] == static_cast<int>(c);
            const bool pred_c = preds[i] == static_cast<int>(c);
            if (is_c) support += 1.0;
            if (is_c && pred_c) tp += 1.0;
            if (!is_c && pred_c) fp += 1.0;
            if (is_c && !pred_c) fn += 1.0;
        }
        if (support == 0.0) continue;
        ++present;
        recall_sum += tp / support;
        const double denom = 2.0 * tp + fp + fn;
        const double f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
        macro += f1;
        weighted += f1 * support / n;
        if (c == 1) f1_bin = f1;
    }
    return {100.0 * correct / n, 100.0 * recall_sum / static_cast<double>(present),
            f1_bin, macro / static_cast<double>(present), weighted};
}

struct RankingOracle {
    std::vector<double> recall_at;
    std::vector<double> ndcg_at;
    double map;
};

inline RankingOracle ranking_metrics(const std::vector<std::size_t>& ranks,
                                     const std::vector<std::size_t>& ks) {
    RankingOracle out;
    const auto n = static_cast<double>(ranks.size());
    for (const std::size_t k : ks) {
        double hits = 0.0, gain = 0.0;
        for (const std::size_t r : ranks) {
            if (r <= k) {
                hits += 1.0;
                gain += 1.0 / std::log2(1.0 + static_cast<double>(r));
            }
        }
        out.recall_at.push_back(hits / n);
        out.ndcg_at.push_back(gain / n);
    }
    double ap = 0.0;
    for (const std::size_t r : ranks) ap += 1.0 / static_cast<double>(r);
    out.map = ap / n;
    return out;
}

// Exhaustive kNN with the documented tie rules (full sort, no partial
// selection shortcuts).
inline int knn_vote(const nestcl::Matrix& train, const std::vector<int>& labels,
                    std::span<const double> query, std::size_t k, std::size_t num_classes) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < train.rows; ++i) {
        all.emplace_back(1.0 - nestcl::cosine_sim(query, train.row(i)), i);
    }
    std::sort(all.begin(), all.end());
    std::vector<double> votes(num_classes, 0.0), dist(num_classes, 0.0);
    for (std::size_t t = 0; t < k; ++t) {
        votes[static_cast<std::size_t>(labels[all[t].second])] += 1.0;
        dist[static_cast<std::size_t>(labels[all[t].second])] += all[t].first;
    }
    int best = -1;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (votes[c] == 0.0) continue;
        if (best < 0 || votes[c] > votes[static_cast<std::size_t>(best)] ||
            (votes[c] == votes[static_cast<std::size_t>(best)] &&
             dist[c] < dist[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(c);
        }
    }
    return best;
}

// Nearest-rank percentile by linear scan instead of sort+index.
inline double percentile_scan(const std::vector<double>& values, double level) {
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(level / 100.0 * n));
    if (rank < 1) rank = 1;
    std::vector<double> copy = values;
    std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                     copy.end());
    return copy[rank - 1];
}

// Central finite differences through an arbitrary scalar function of one
// mutable parameter cell.
template <typename F>
double central_difference(double& cell, F&& value_of, double step = 1e-5) {
    const double saved = cell;
    cell = saved + step;
    const double up = value_of();
    cell = saved - step;
    const double down = value_of();
    cell = saved;
    return (up - down) / (2.0 * step);
}

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / denom;
}

} // namespace oracles
