#include <cmath>
#include <set>

#include <doctest.h>

#include "nestcl/errors.hpp"
#include "nestcl/sampling.hpp"

using namespace nestcl;

namespace {

PatientRecord patient_with(std::size_t benign, std::size_t malignant) {
    PatientRecord rec;
    rec.patient_id = "P";
    rec.patient_meta = {0.0};
    rec.patient_missing = {false};
    for (std::size_t i = 0; i < benign + malignant; ++i) {
        LesionRecord les;
        les.lesion_id = "L" + std::to_string(i);
        les.image = {0.5f};
        les.lesion_meta = {0.0};
        les.lesion_missing = {false};
        les.label = i < malignant ? 1 : 0;
        rec.lesions.push_back(les);
    }
    return rec;
}

Dataset uniform_dataset(std::size_t patients, std::size_t lesions) {
    Dataset ds;
    ds.image_dim = 1;
    ds.patient_features = {{"pm", false, 0}};
    ds.lesion_features = {{"lm", false, 0}};
    for (std::size_t p = 0; p < patients; ++p) {
        PatientRecord rec = patient_with(lesions, 0);
        rec.patient_id = "P" + std::to_string(p);
        ds.patients.push_back(rec);
    }
    return ds;
}

} // namespace

TEST_CASE("select_lesions takes everything under the cap") {
    Rng rng(1);
    const PatientRecord p = patient_with(3, 0);
    const auto picked = select_lesions(p, 5, true, rng);
    CHECK(picked == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("positive sampling always keeps the malignant lesions") {
    const PatientRecord p = patient_with(148, 2);
    Rng rng(2);
    for (int draw = 0; draw < 10000; ++draw) {
        const auto picked = select_lesions(p, 100, true, rng);
        CHECK(picked.size() == 100);
        std::set<std::size_t> unique(picked.begin(), picked.end());
        CHECK(unique.size() == 100);
        CHECK(unique.count(0) == 1);
        CHECK(unique.count(1) == 1);
    }
}

TEST_CASE("malignant overflow truncates uniformly to the cap") {
    const PatientRecord p = patient_with(0, 12);
    Rng rng(3);
    std::vector<std::size_t> counts(12, 0);
    for (int draw = 0; draw < 6000; ++draw) {
        const auto picked = select_lesions(p, 5, true, rng);
        CHECK(picked.size() == 5);
        for (const std::size_t i : picked) ++counts[i];
    }
    for (const std::size_t c : counts) {
        CHECK(std::abs(static_cast<double>(c) / 6000.0 - 5.0 / 12.0) < 0.03);
    }
}

TEST_CASE("uniform sampling matches the hypergeometric inclusion rate") {
    const PatientRecord p = patient_with(150, 0);
    Rng rng(4);
    std::vector<std::size_t> counts(150, 0);
    const int draws = 10000;
    for (int draw = 0; draw < draws; ++draw) {
        const auto picked = select_lesions(p, 100, false, rng);
        CHECK(picked.size() == 100);
        for (const std::size_t i : picked) ++counts[i];
    }
    for (const std::size_t c : counts) {
        const double freq = static_cast<double>(c) / draws;
        CHECK(std::abs(freq - 2.0 / 3.0) <= 0.02);
    }
}

TEST_CASE("sample_epoch covers every patient exactly once") {
    const Dataset ds = uniform_dataset(10, 4);
    SamplerConfig cfg;
    cfg.batch_patients = 4;
    cfg.seed = 11;
    const auto batches = sample_epoch(ds, cfg, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    std::set<std::size_t> seen;
    for (const auto& batch : batches) {
        for (const auto& sel : batch) {
            CHECK(seen.insert(sel.patient).second);
            CHECK(sel.lesions.size() == 4);
        }
    }
    CHECK(seen.size() == 10);
}

TEST_CASE("sample_epoch is deterministic per (seed, epoch) and fresh per epoch") {
    const Dataset ds = uniform_dataset(8, 6);
    SamplerConfig cfg;
    cfg.batch_patients = 4;
    cfg.max_lesions = 3;
    cfg.seed = 42;

    const auto a = sample_epoch(ds, cfg, 0);
    const auto b = sample_epoch(ds, cfg, 0);
    REQUIRE(a.size() == b.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            identical = identical && a[i][j].patient == b[i][j].patient &&
                        a[i][j].lesions == b[i][j].lesions;
        }
    }
    CHECK(identical);

    const auto c = sample_epoch(ds, cfg, 1);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.size() && !any_difference; ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            if (a[i][j].patient != c[i][j].patient || a[i][j].lesions != c[i][j].lesions) {
                any_difference = true;
                break;
            }
        }
    }
    CHECK(any_difference);
}

TEST_CASE("sampler rejects an empty dataset and bad configs") {
    Dataset empty;
    SamplerConfig cfg;
    CHECK_THROWS_AS(sample_epoch(empty, cfg, 0), EmptyDataset);
    cfg.batch_patients = 0;
    CHECK_THROWS_AS(sample_epoch(uniform_dataset(2, 2), cfg, 0), ConfigError);
}
