#include <cmath>

#include <doctest.h>

#include "nestcl/errors.hpp"
#include "nestcl/evaluation.hpp"
#include "nestcl/rng.hpp"
#include "oracles.hpp"

using namespace nestcl;

namespace {

Matrix binary_scores(const std::vector<double>& positive) {
    Matrix m(positive.size(), 2);
    for (std::size_t i = 0; i < positive.size(); ++i) {
        m(i, 0) = 1.0 - positive[i];
        m(i, 1) = positive[i];
    }
    return m;
}

FeatureSet toy_set(const Matrix& features, const std::vector<int>& labels,
                   std::size_t num_classes = 2) {
    FeatureSet set;
    set.features = features;
    set.labels = labels;
    set.labeled.assign(labels.size(), true);
    set.num_classes = num_classes;
    return set;
}

} // namespace

TEST_CASE("compute_metrics on hand examples") {
    SUBCASE("perfect binary") {
        const auto report = compute_metrics({1, 0}, {1, 0}, binary_scores({0.9, 0.1}), 2);
        CHECK(report.accuracy_pct == 100.0);
        CHECK(report.balanced_accuracy_pct == 100.0);
        CHECK(report.auc == 1.0);
        CHECK(report.f1_binary == 1.0);
    }
    SUBCASE("majority voting under imbalance") {
        std::vector<int> labels(100, 0);
        for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = 1;
        const std::vector<int> preds(100, 0);
        const auto report =
            compute_metrics(labels, preds, binary_scores(std::vector<double>(100, 0.2)), 2);
        CHECK(report.accuracy_pct == 90.0);
        CHECK(report.balanced_accuracy_pct == 50.0);
        CHECK(report.f1_binary == 0.0);
    }
    SUBCASE("degenerate label set reports NaN, not zero") {
        const auto report = compute_metrics({1, 1}, {1, 0}, binary_scores({0.9, 0.2}), 2);
        CHECK(std::isnan(report.auc));
        CHECK_FALSE(std::isnan(report.accuracy_pct));
    }
}

TEST_CASE("AUC equals the all-pairs oracle on random instances") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 10 + static_cast<std::size_t>(rng.below(491));
        std::vector<int> labels(n);
        std::vector<double> scores(n);
        bool has_both = false;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.uniform() < 0.3 ? 1 : 0;
            // Coarse grid so score ties actually occur.
            scores[i] = std::floor(rng.uniform() * 20.0) / 20.0;
        }
        labels[0] = 0;
        labels[1] = 1;
        has_both = true;
        std::vector<int> preds(n, 0);
        const auto report = compute_metrics(labels, preds, binary_scores(scores), 2);
        const double expect = oracles::auc_pairs(labels, scores);
        CHECK(has_both);
        CHECK(std::abs(report.auc - expect) <= 1e-12);
    }
}

TEST_CASE("classification metrics equal the confusion-matrix oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 20 + static_cast<std::size_t>(rng.below(200));
        const std::size_t classes = 2 + static_cast<std::size_t>(rng.below(3));
        std::vector<int> labels(n), preds(n);
        Matrix scores(n, classes);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.below(classes));
            preds[i] = static_cast<int>(rng.below(classes));
            for (std::size_t c = 0; c < classes; ++c) scores(i, c) = rng.uniform();
        }
        labels[0] = 0;
        labels[1] = 1; // at least two classes present
        const auto report = compute_metrics(labels, preds, scores, classes);
        const auto expect = oracles::classification_metrics(labels, preds, classes);
        CHECK(std::abs(report.accuracy_pct - expect.accuracy_pct) <= 1e-12);
        CHECK(std::abs(report.balanced_accuracy_pct - expect.balanced_accuracy_pct) <= 1e-12);
        CHECK(std::abs(report.f1_macro - expect.f1_macro) <= 1e-12);
        CHECK(std::abs(report.f1_weighted - expect.f1_weighted) <= 1e-12);
        if (classes == 2) CHECK(std::abs(report.f1_binary - expect.f1_binary) <= 1e-12);
    }
}

TEST_CASE("balanced accuracy is invariant under duplicating a class") {
    const std::vector<int> labels{0, 0, 0, 1, 1};
    const std::vector<int> preds{0, 1, 0, 1, 0};
    const auto base =
        compute_metrics(labels, preds, binary_scores({0.1, 0.8, 0.2, 0.7, 0.3}), 2);

    std::vector<int> labels2 = labels;
    std::vector<int> preds2 = preds;
    std::vector<double> scores2{0.1, 0.8, 0.2, 0.7, 0.3};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            labels2.push_back(labels[i]);
            preds2.push_back(preds[i]);
            scores2.push_back(0.5);
        }
    }
    const auto doubled = compute_metrics(labels2, preds2, binary_scores(scores2), 2);
    CHECK(base.balanced_accuracy_pct ==
          doctest::Approx(doubled.balanced_accuracy_pct).epsilon(1e-12));
}

TEST_CASE("knn matches hand enumeration and the exhaustive oracle") {
    SUBCASE("duplicated eval point with k=1 predicts its own label") {
        Matrix train(3, 2);
        train(0, 0) = 1.0;
        train(1, 1) = 1.0;
        train(2, 0) = -1.0;
        const FeatureSet train_set = toy_set(train, {1, 0, 0});
        Matrix eval(1, 2);
        eval(0, 0) = 1.0;
        const FeatureSet eval_set = toy_set(eval, {1});
        const auto res = knn_classify(train_set, eval_set, 1);
        CHECK(res.predictions[0] == 1);
        CHECK(res.metrics.accuracy_pct == 100.0);
    }
    SUBCASE("k equal to train size predicts the global majority") {
        Rng rng(43);
        Matrix train(7, 3);
        for (double& x : train.data) x = rng.normal();
        const FeatureSet train_set = toy_set(train, {0, 0, 0, 0, 1, 1, 1});
        Matrix eval(4, 3);
        for (double& x : eval.data) x = rng.normal();
        const FeatureSet eval_set = toy_set(eval, {0, 1, 0, 1});
        const auto res = knn_classify(train_set, eval_set, 7);
        for (const int p : res.predictions) CHECK(p == 0);
    }
    SUBCASE("random instances agree with the exhaustive oracle") {
        Rng rng(44);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 10 + static_cast<std::size_t>(rng.below(41));
            Matrix train(n, 4);
            for (double& x : train.data) x = rng.normal();
            std::vector<int> labels(n);
            for (auto& y : labels) y = static_cast<int>(rng.below(3));
            const FeatureSet train_set = toy_set(train, labels, 3);
            Matrix eval(5, 4);
            for (double& x : eval.data) x = rng.normal();
            const FeatureSet eval_set = toy_set(eval, {0, 1, 2, 0, 1}, 3);
            const std::size_t k = 1 + static_cast<std::size_t>(rng.below(n));
            const auto res = knn_classify(train_set, eval_set, k);
            for (std::size_t q = 0; q < 5; ++q) {
                CHECK(res.predictions[q] ==
                      oracles::knn_vote(train, labels, eval.row(q), k, 3));
            }
        }
    }
    SUBCASE("knn with k=1 on train=eval is perfect") {
        Rng rng(45);
        Matrix m(12, 3);
        for (double& x : m.data) x = rng.normal();
        std::vector<int> labels(12);
        for (auto& y : labels) y = static_cast<int>(rng.below(2));
        const FeatureSet set = toy_set(m, labels);
        const auto res = knn_classify(set, set, 1);
        CHECK(res.metrics.accuracy_pct == 100.0);
    }
    SUBCASE("errors") {
        const FeatureSet set = toy_set(Matrix(2, 2, 1.0), {0, 1});
        CHECK_THROWS_AS(knn_classify(set, set, 3), EvalError);
        FeatureSet unlabeled = set;
        unlabeled.labeled = {false, false};
        CHECK_THROWS_AS(knn_classify(unlabeled, set, 1), EvalError);
    }
}

TEST_CASE("ranking metrics closed forms") {
    SUBCASE("truth always first") {
        const auto report = ranking_metrics_from_ranks({1, 1, 1}, {1, 5});
        CHECK(report.recall_at[0] == 1.0);
        CHECK(report.ndcg_at[0] == 1.0);
        CHECK(report.ndcg_at[1] == 1.0);
        CHECK(report.mean_average_precision == 1.0);
    }
    SUBCASE("single query at rank two") {
        const auto report = ranking_metrics_from_ranks({2}, {1, 5});
        CHECK(report.recall_at[0] == 0.0);
        CHECK(report.ndcg_at[1] == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
        CHECK(report.mean_average_precision == 0.5);
    }
    SUBCASE("ranks one and three") {
        const auto report = ranking_metrics_from_ranks({1, 3}, {5});
        CHECK(report.mean_average_precision ==
              doctest::Approx((1.0 + 1.0 / 3.0) / 2.0).epsilon(1e-12));
    }
    SUBCASE("permutation invariance and oracle agreement") {
        Rng rng(46);
        std::vector<std::size_t> ranks;
        for (int i = 0; i < 50; ++i) ranks.push_back(1 + rng.below(30));
        const std::vector<std::size_t> ks{1, 5, 10};
        const auto a = ranking_metrics_from_ranks(ranks, ks);
        std::vector<std::size_t> shuffled = ranks;
        rng.shuffle(shuffled);
        const auto b = ranking_metrics_from_ranks(shuffled, ks);
        CHECK(a.mean_average_precision == doctest::Approx(b.mean_average_precision).epsilon(1e-12));
        const auto oracle = oracles::ranking_metrics(ranks, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            CHECK(std::abs(a.recall_at[i] - oracle.recall_at[i]) <= 1e-12);
            CHECK(std::abs(a.ndcg_at[i] - oracle.ndcg_at[i]) <= 1e-12);
        }
        CHECK(std::abs(a.mean_average_precision - oracle.map) <= 1e-12);
    }
    SUBCASE("ranked-id interface checks truth membership") {
        CHECK_THROWS_AS(ranking_metrics({{0, 1, 2}}, {7}, {1}), EvalError);
        const auto report = ranking_metrics({{4, 2, 9}, {1, 7, 3}}, {9, 7}, {1, 2, 3});
        CHECK(report.rank_of_truth[0] == 3);
        CHECK(report.rank_of_truth[1] == 2);
    }
}

TEST_CASE("linear probe separates separable data and stays near chance on noise") {
    Rng rng(47);
    SUBCASE("separable two-class toy set reaches BA 100") {
        Matrix train(40, 2), eval(20, 2);
        std::vector<int> train_labels(40), eval_labels(20);
        for (std::size_t i = 0; i < 40; ++i) {
            const int y = i % 2 == 0 ? 1 : 0;
            train_labels[i] = y;
            train(i, 0) = (y == 1 ? 2.0 : -2.0) + 0.1 * rng.normal();
            train(i, 1) = rng.normal();
        }
        for (std::size_t i = 0; i < 20; ++i) {
            const int y = i % 2 == 0 ? 1 : 0;
            eval_labels[i] = y;
            eval(i, 0) = (y == 1 ? 2.0 : -2.0) + 0.1 * rng.normal();
            eval(i, 1) = rng.normal();
        }
        const auto res =
            linear_probe(toy_set(train, train_labels), toy_set(eval, eval_labels), ProbeConfig{});
        CHECK(res.metrics.balanced_accuracy_pct == 100.0);
    }
    SUBCASE("label permutation keeps AUC near one half") {
        double auc_sum = 0.0;
        for (int s = 0; s < 5; ++s) {
            Matrix train(100, 3), eval(60, 3);
            std::vector<int> train_labels(100), eval_labels(60);
            for (std::size_t i = 0; i < 100; ++i) {
                for (std::size_t c = 0; c < 3; ++c) train(i, c) = rng.normal();
                train_labels[i] = static_cast<int>(rng.below(2));
            }
            for (std::size_t i = 0; i < 60; ++i) {
                for (std::size_t c = 0; c < 3; ++c) eval(i, c) = rng.normal();
                eval_labels[i] = static_cast<int>(rng.below(2));
            }
            train_labels[0] = 0;
            train_labels[1] = 1;
            eval_labels[0] = 0;
            eval_labels[1] = 1;
            const auto res = linear_probe(toy_set(train, train_labels),
                                          toy_set(eval, eval_labels), ProbeConfig{});
            auc_sum += res.metrics.auc;
        }
        CHECK(auc_sum / 5.0 > 0.35);
        CHECK(auc_sum / 5.0 < 0.65);
    }
    SUBCASE("multiclass probe runs with softmax outputs") {
        Matrix train(60, 2), eval(30, 2);
        std::vector<int> train_labels(60), eval_labels(30);
        auto place = [&](Matrix& m, std::vector<int>& labels, std::size_t i) {
            const int y = static_cast<int>(i % 3);
            labels[i] = y;
            m(i, 0) = (y == 0 ? -2.0 : y == 1 ? 0.0 : 2.0) + 0.05 * rng.normal();
            m(i, 1) = (y == 1 ? 2.0 : -1.0) + 0.05 * rng.normal();
        };
        for (std::size_t i = 0; i < 60; ++i) place(train, train_labels, i);
        for (std::size_t i = 0; i < 30; ++i) place(eval, eval_labels, i);
        const auto res = linear_probe(toy_set(train, train_labels, 3),
                                      toy_set(eval, eval_labels, 3), ProbeConfig{});
        CHECK(res.metrics.accuracy_pct > 95.0);
        CHECK(res.scores.cols == 3);
    }
    SUBCASE("single-class train split is rejected") {
        const FeatureSet bad = toy_set(Matrix(4, 2, 1.0), {1, 1, 1, 1});
        CHECK_THROWS_AS(linear_probe(bad, bad, ProbeConfig{}), ProbeError);
    }
    SUBCASE("unlabeled rows are excluded from fitting") {
        Matrix train(4, 1);
        train(0, 0) = -1.0;
        train(1, 0) = 1.0;
        train(2, 0) = -5.0;
        train(3, 0) = 5.0;
        FeatureSet set = toy_set(train, {0, 1, 1, 0});
        set.labeled = {true, true, false, false}; // contradicting rows are unlabeled
        const FeatureSet eval = toy_set(train, {0, 1, 1, 0});
        const auto res = linear_probe(set, eval, ProbeConfig{});
        // Fitted on rows 0/1 only: sign of the feature decides.
        CHECK(res.predictions[0] == 0);
        CHECK(res.predictions[1] == 1);
        CHECK(res.predictions[2] == 0);
        CHECK(res.predictions[3] == 1);
    }
}

TEST_CASE("cross-modal eval is symmetric on aligned embeddings") {
    GenConfig gen;
    gen.num_patients = 6;
    gen.lesions_min = 3;
    gen.lesions_max = 4;
    gen.image_dim = 8;
    gen.latent_dim = 3;
    gen.seed = 50;
    const Dataset ds = generate(gen);
    const Model model = init_model(ds, {6, 4, 8}, Architecture::Nested, 51);

    const auto img2meta = eval_crossmodal(model, ds, CrossModalDirection::ImageToMeta, {1, 5});
    const auto meta2img = eval_crossmodal(model, ds, CrossModalDirection::MetaToImage, {1, 5});
    CHECK(img2meta.query_ids.size() == ds.lesion_count());
    CHECK(img2meta.ranking.rank_of_truth.size() == meta2img.ranking.rank_of_truth.size());

    // Brute-force rank check for a few queries.
    const auto emb = embed_dataset(model, ds);
    for (const std::size_t q : {0ul, 3ul, 7ul}) {
        const double truth = cosine_sim(emb.image.row(q), emb.lesion_meta.row(q));
        std::size_t rank = 1;
        for (std::size_t i = 0; i < emb.image.rows; ++i) {
            if (i == q) continue;
            const double s = cosine_sim(emb.image.row(q), emb.lesion_meta.row(i));
            if (s > truth || (s == truth && i < q)) ++rank;
        }
        CHECK(img2meta.ranking.rank_of_truth[q] == rank);
    }
}
