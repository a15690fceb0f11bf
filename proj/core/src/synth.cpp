#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "nestcl/data.hpp"
#include "nestcl/errors.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

namespace {

// Entries N(0,1)/sqrt(cols) so projected vectors keep unit-scale variance.
Matrix random_projection(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& x : m.data) x = rng.normal() * scale;
    return m;
}

Vector project(const Matrix& m, const Vector& v) {
    Vector out(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        out[i] = dot(m.row(i), v);
    }
    return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string patient_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%05zu", index);
    return buf;
}

std::string lesion_name(const std::string& patient, std::size_t index) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "_L%03zu", index);
    return patient + buf;
}

} // namespace

Dataset generate(const GenConfig& cfg) {
    cfg.validate();

    Rng rng(cfg.seed);

    // Fixed per-dataset projections, drawn before any record.
    Matrix lesion_latent_map = random_projection(rng, cfg.latent_dim, cfg.latent_dim);
    Matrix image_map = random_projection(rng, cfg.image_dim, cfg.latent_dim);
    Matrix lesion_meta_map = random_projection(rng, cfg.lesion_meta_dim, cfg.latent_dim);
    Matrix patient_meta_map = random_projection(rng, cfg.patient_meta_dim, cfg.latent_dim);
    if (cfg.planted_feature_boost != 1.0) {
        for (double& x : lesion_meta_map.row(cfg.planted_feature_index)) {
            x *= cfg.planted_feature_boost;
        }
    }
    Vector score_direction(cfg.latent_dim);
    for (double& x : score_direction) x = rng.normal();
    score_direction = l2_normalize(score_direction);

    Dataset ds;
    ds.image_dim = cfg.image_dim;
    ds.num_classes = 2;
    for (std::size_t j = 0; j < cfg.patient_meta_dim; ++j) {
        ds.patient_features.push_back({"pm_" + std::to_string(j), false, 0});
    }
    for (std::size_t j = 0; j < cfg.lesion_meta_dim; ++j) {
        ds.lesion_features.push_back({"lm_" + std::to_string(j), false, 0});
    }

    // Small fixed measurement noise; noise_scale controls the within-patient
    // lesion deviation (the planted signal), not the sensor noise.
    const double image_noise_sd = 0.02;
    const double meta_noise_sd = 0.1;
    std::vector<double> scores;

    ds.patients.resize(cfg.num_patients);
    for (std::size_t p = 0; p < cfg.num_patients; ++p) {
        PatientRecord& rec = ds.patients[p];
        rec.patient_id = patient_name(p);

        Vector latent(cfg.latent_dim);
        for (double& x : latent) x = rng.normal();

        rec.patient_meta = project(patient_meta_map, latent);
        for (double& x : rec.patient_meta) x += meta_noise_sd * rng.normal();
        rec.patient_missing.resize(cfg.patient_meta_dim);
        for (std::size_t j = 0; j < cfg.patient_meta_dim; ++j) {
            const bool missing = rng.uniform() < cfg.missing_rate;
            rec.patient_missing[j] = missing;
            if (missing) rec.patient_meta[j] = 0.0;
        }

        const std::size_t n_lesions =
            cfg.lesions_min + static_cast<std::size_t>(rng.below(cfg.lesions_max - cfg.lesions_min + 1));
        rec.lesions.resize(n_lesions);
        for (std::size_t l = 0; l < n_lesions; ++l) {
            LesionRecord& les = rec.lesions[l];
            les.lesion_id = lesion_name(rec.patient_id, l);

            Vector lesion_latent = project(lesion_latent_map, latent);
            for (double& x : lesion_latent) x += cfg.noise_scale * rng.normal();

            Vector pixels = project(image_map, lesion_latent);
            les.image.resize(cfg.image_dim);
            for (std::size_t j = 0; j < cfg.image_dim; ++j) {
                const double v = sigmoid(pixels[j]) + image_noise_sd * rng.normal();
                les.image[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }

            les.lesion_meta = project(lesion_meta_map, lesion_latent);
            for (double& x : les.lesion_meta) x += meta_noise_sd * rng.normal();
            les.lesion_missing.resize(cfg.lesion_meta_dim);
            for (std::size_t j = 0; j < cfg.lesion_meta_dim; ++j) {
                const bool missing = rng.uniform() < cfg.missing_rate;
                les.lesion_missing[j] = missing;
                if (missing) les.lesion_meta[j] = 0.0;
            }

            // Malignancy scores the lesion's deviation from its patient's
            // latent baseline, so the label is a within-patient outlier
            // signal rather than a patient-level trait.
            Vector baseline = project(lesion_latent_map, latent);
            double score = 0.0;
            for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
                score += score_direction[j] * (lesion_latent[j] - baseline[j]);
            }
            scores.push_back(score);
        }
    }

    // Threshold at the (1 - malignant_rate) nearest-rank quantile of the
    // scores observed in this sample; strictly-above lesions are malignant.
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil((1.0 - cfg.malignant_rate) * static_cast<double>(sorted.size())));
    const double threshold = sorted[std::min(rank == 0 ? 0 : rank - 1, sorted.size() - 1)];

    std::size_t idx = 0;
    for (auto& patient : ds.patients) {
        for (auto& lesion : patient.lesions) {
            lesion.label = scores[idx] > threshold ? 1 : 0;
            ++idx;
        }
    }
    return ds;
}

} // namespace nestcl
