#include "nestcl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "nestcl/errors.hpp"
#include "nestcl/optimizer.hpp"
#include "nestcl/parallel.hpp"

namespace nestcl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Exact AUC via the rank-sum identity with average ranks for ties; equal to
// all-pairs concordance counting with ties worth 1/2.
double binary_auc(const std::vector<int>& labels, const std::vector<double>& scores,
                  int positive_class) {
    const std::size_t n = labels.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == positive_class) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            } else {
                ++n_neg;
            }
        }
        i = j;
    }
    if (n_pos == 0 || n_neg == 0) return kNaN;
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

} // namespace

MetricsReport compute_metrics(const std::vector<int>& labels,
                              const std::vector<int>& predictions, const Matrix& scores,
                              std::size_t num_classes) {
    const std::size_t n = labels.size();
    if (predictions.size() != n || scores.rows != n)
        throw EvalError("compute_metrics: misaligned inputs");
    if (n == 0) throw EvalError("compute_metrics: empty sample");
    if (num_classes < 2) throw EvalError("compute_metrics: need >= 2 classes");

    std::vector<std::size_t> support(num_classes, 0);
    std::vector<std::size_t> true_pos(num_classes, 0);
    std::vector<std::size_t> pred_count(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        const int p = predictions[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes || p < 0 ||
            static_cast<std::size_t>(p) >= num_classes)
            throw EvalError("compute_metrics: label outside [0, num_classes)");
        ++support[static_cast<std::size_t>(y)];
        ++pred_count[static_cast<std::size_t>(p)];
        if (y == p) {
            ++correct;
            ++true_pos[static_cast<std::size_t>(y)];
        }
    }

    MetricsReport report;
    report.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(n);

    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        recall_sum += static_cast<double>(true_pos[c]) / static_cast<double>(support[c]);
        ++present;
    }
    report.balanced_accuracy_pct = present > 0 ? 100.0 * recall_sum / static_cast<double>(present)
                                               : kNaN;

    auto f1_of_class = [&](std::size_t c) {
        const double tp = static_cast<double>(true_pos[c]);
        const double fp = static_cast<double>(pred_count[c]) - tp;
        const double fn = static_cast<double>(support[c]) - tp;
        const double denom = 2.0 * tp + fp + fn;
        return denom > 0.0 ? 2.0 * tp / denom : 0.0;
    };

    double macro = 0.0, weighted = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (support[c] == 0) continue;
        const double f1 = f1_of_class(c);
        macro += f1;
        weighted += f1 * static_cast<double>(support[c]) / static_cast<double>(n);
    }
    report.f1_macro = present > 0 ? macro / static_cast<double>(present) : kNaN;
    report.f1_weighted = present > 0 ? weighted : kNaN;

    if (num_classes == 2) {
        report.f1_binary = support[1] > 0 ? f1_of_class(1) : kNaN;
        std::vector<double> pos_scores(n);
        const std::size_t col = scores.cols >= 2 ? 1 : 0;
        for (std::size_t i = 0; i < n; ++i) pos_scores[i] = scores(i, col);
        report.auc = binary_auc(labels, pos_scores, 1);
    } else {
        report.f1_binary = kNaN;
        if (scores.cols < num_classes) throw EvalError("compute_metrics: score column count");
        // Macro one-vs-rest over classes with both positives and negatives.
        double auc_sum = 0.0;
        std::size_t auc_classes = 0;
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (support[c] == 0 || support[c] == n) continue;
            std::vector<int> ovr(n);
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) {
                ovr[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
                col[i] = scores(i, c);
            }
            const double auc = binary_auc(ovr, col, 1);
            if (!std::isnan(auc)) {
                auc_sum += auc;
                ++auc_classes;
            }
        }
        report.auc = auc_classes > 0 ? auc_sum / static_cast<double>(auc_classes) : kNaN;
    }
    return report;
}

namespace {

struct LabeledView {
    std::vector<std::size_t> rows;
    std::set<int> classes;
};

LabeledView labeled_rows(const FeatureSet& set) {
    LabeledView view;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.labeled[i]) {
            view.rows.push_back(i);
            view.classes.insert(set.labels[i]);
        }
    }
    return view;
}

} // namespace

ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& eval,
                         const ProbeConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("probe epochs must be >= 1");
    const LabeledView view = labeled_rows(train);
    if (view.classes.size() < 2) throw ProbeError("probe needs >= 2 classes in train");
    if (eval.size() == 0) throw EvalError("probe eval split is empty");
    if (train.features.cols != eval.features.cols)
        throw ShapeError("probe train/eval feature widths differ");

    const std::size_t dim = train.features.cols;
    const std::size_t num_classes = train.num_classes;
    const bool binary = num_classes == 2;
    const std::size_t out_dim = binary ? 1 : num_classes;
    const auto n_train = static_cast<double>(view.rows.size());

    // Deterministic zero init; full-batch AdamW.
    std::vector<double> params((dim + 1) * out_dim, 0.0);
    std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
    std::vector<std::uint8_t> mask(params.size(), 1);
    const OptimizerConfig opt{cfg.learning_rate, cfg.weight_decay, 0.9, 0.999, 1e-8};

    auto logits_of = [&](std::span<const double> row, std::span<const double> p,
                         std::span<double> out) {
        for (std::size_t o = 0; o < out_dim; ++o) {
            double z = p[dim * out_dim + o]; // bias block sits after weights
            for (std::size_t a = 0; a < dim; ++a) z += row[a] * p[a * out_dim + o];
            out[o] = z;
        }
    };

    std::vector<double> grads(params.size());
    Vector logit_buf(out_dim);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::fill(grads.begin(), grads.end(), 0.0);
        for (const std::size_t i : view.rows) {
            const auto row = train.features.row(i);
            logits_of(row, params, logit_buf);
            if (binary) {
                const double z = logit_buf[0];
                const double prob = 1.0 / (1.0 + std::exp(-z));
                const double delta = (prob - (train.labels[i] == 1 ? 1.0 : 0.0)) / n_train;
                for (std::size_t a = 0; a < dim; ++a) grads[a * out_dim] += row[a] * delta;
                grads[dim * out_dim] += delta;
            } else {
                softmax_row_inplace(logit_buf);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double target = train.labels[i] == static_cast<int>(o) ? 1.0 : 0.0;
                    const double delta = (logit_buf[o] - target) / n_train;
                    for (std::size_t a = 0; a < dim; ++a)
                        grads[a * out_dim + o] += row[a] * delta;
                    grads[dim * out_dim + o] += delta;
                }
            }
        }
        adamw_step(params, grads, m1, m2, static_cast<std::int64_t>(epoch), mask, opt);
    }

    ProbeResult result;
    result.weights = Matrix(dim, out_dim);
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t o = 0; o < out_dim; ++o) result.weights(a, o) = params[a * out_dim + o];
    result.bias.assign(params.begin() + static_cast<std::ptrdiff_t>(dim * out_dim), params.end());

    result.scores = Matrix(eval.size(), num_classes);
    result.predictions.resize(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
        logits_of(eval.features.row(i), params, logit_buf);
        if (binary) {
            const double prob = 1.0 / (1.0 + std::exp(-logit_buf[0]));
            result.scores(i, 0) = 1.0 - prob;
            result.scores(i, 1) = prob;
            result.predictions[i] = prob > 0.5 ? 1 : 0;
        } else {
            softmax_row_inplace(logit_buf);
            std::size_t best = 0;
            for (std::size_t o = 0; o < out_dim; ++o) {
                result.scores(i, o) = logit_buf[o];
                if (logit_buf[o] > logit_buf[best]) best = o;
            }
            result.predictions[i] = static_cast<int>(best);
        }
    }
    result.metrics = compute_metrics(eval.labels, result.predictions, result.scores, num_classes);
    return result;
}

KnnResult knn_classify(const FeatureSet& train, const FeatureSet& eval, std::size_t k) {
    const LabeledView view = labeled_rows(train);
    if (view.rows.empty()) throw EvalError("knn train split is empty");
    if (k < 1) throw EvalError("knn needs k >= 1");
    if (k > view.rows.size()) throw EvalError("knn k exceeds train size");
    if (train.features.cols != eval.features.cols)
        throw ShapeError("knn train/eval feature widths differ");

    const std::size_t num_classes = train.num_classes;
    KnnResult result;
    result.scores = Matrix(eval.size(), num_classes, 0.0);
    result.predictions.resize(eval.size());

    struct Neighbor {
        double distance;
        std::size_t train_row;
    };
    std::vector<Neighbor> neighbors(view.rows.size());

    for (std::size_t q = 0; q < eval.size(); ++q) {
        for (std::size_t t = 0; t < view.rows.size(); ++t) {
            const std::size_t row = view.rows[t];
            neighbors[t] = {1.0 - cosine_sim(eval.features.row(q), train.features.row(row)), row};
        }
        std::partial_sort(neighbors.begin(), neighbors.begin() + static_cast<std::ptrdiff_t>(k),
                          neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
                              if (a.distance != b.distance) return a.distance < b.distance;
                              return a.train_row < b.train_row;
                          });

        std::vector<std::size_t> votes(num_classes, 0);
        std::vector<double> summed_distance(num_classes, 0.0);
        for (std::size_t t = 0; t < k; ++t) {
            const int label = train.labels[neighbors[t].train_row];
            ++votes[static_cast<std::size_t>(label)];
            summed_distance[static_cast<std::size_t>(label)] += neighbors[t].distance;
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
            result.scores(q, c) = static_cast<double>(votes[c]) / static_cast<double>(k);
        }

        std::size_t best = 0;
        bool have = false;
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (votes[c] == 0) continue;
            if (!have) {
                best = c;
                have = true;
                continue;
            }
            if (votes[c] > votes[best] ||
                (votes[c] == votes[best] && summed_distance[c] < summed_distance[best])) {
                best = c;
            }
        }
        result.predictions[q] = static_cast<int>(best);
    }
    result.metrics = compute_metrics(eval.labels, result.predictions, result.scores, num_classes);
    return result;
}

RankingReport ranking_metrics_from_ranks(const std::vector<std::size_t>& ranks,
                                         const std::vector<std::size_t>& ks) {
    if (ranks.empty()) throw EvalError("ranking metrics need >= 1 query");
    RankingReport report;
    report.ks = ks;
    report.rank_of_truth = ranks;
    const auto n = static_cast<double>(ranks.size());
    for (const std::size_t k : ks) {
        std::size_t hit = 0;
        double ndcg = 0.0;
        for (const std::size_t r : ranks) {
            if (r <= k) {
                ++hit;
                ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
            }
        }
        report.recall_at.push_back(static_cast<double>(hit) / n);
        report.ndcg_at.push_back(ndcg / n);
    }
    double ap = 0.0;
    for (const std::size_t r : ranks) ap += 1.0 / static_cast<double>(r);
    report.mean_average_precision = ap / n;
    return report;
}

RankingReport ranking_metrics(const std::vector<std::vector<std::size_t>>& ranked_ids,
                              const std::vector<std::size_t>& truth_ids,
                              const std::vector<std::size_t>& ks) {
    if (ranked_ids.size() != truth_ids.size())
        throw EvalError("ranking_metrics: one truth per query required");
    std::vector<std::size_t> ranks(ranked_ids.size());
    for (std::size_t q = 0; q < ranked_ids.size(); ++q) {
        const auto& ranking = ranked_ids[q];
        const auto it = std::find(ranking.begin(), ranking.end(), truth_ids[q]);
        if (it == ranking.end())
            throw EvalError("truth id missing from ranking of query " + std::to_string(q));
        ranks[q] = static_cast<std::size_t>(it - ranking.begin()) + 1;
    }
    return ranking_metrics_from_ranks(ranks, ks);
}

CrossModalReport eval_crossmodal(const Model& model, const Dataset& dataset,
                                 CrossModalDirection direction,
                                 const std::vector<std::size_t>& ks) {
    const DatasetEmbeddings emb = embed_dataset(model, dataset);
    const bool img_query = direction == CrossModalDirection::ImageToMeta;
    const Matrix& queries = img_query ? emb.image : emb.lesion_meta;
    const Matrix& targets = img_query ? emb.lesion_meta : emb.image;

    const std::size_t n = queries.rows;
    if (n < 2) throw EvalError("cross-modal eval needs >= 2 lesions");

    std::vector<std::size_t> ranks(n);
    parallel_for(n, [&](std::size_t q) {
        const double truth_score = cosine_sim(queries.row(q), targets.row(q));
        std::size_t rank = 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == q) continue;
            const double s = cosine_sim(queries.row(q), targets.row(i));
            if (s > truth_score || (s == truth_score && i < q)) ++rank;
        }
        ranks[q] = rank;
    });

    CrossModalReport report;
    report.ranking = ranking_metrics_from_ranks(ranks, ks);
    report.query_ids = emb.lesion_ids;
    return report;
}

} // namespace nestcl
