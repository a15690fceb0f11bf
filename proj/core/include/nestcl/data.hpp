#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestcl/numerics.hpp"

namespace nestcl {

// Tabular feature description. Categorical values are integer codes in
// [0, cardinality); code == cardinality is reserved for "missing".
struct FeatureSpec {
    std::string name;
    bool categorical = false;
    std::size_t cardinality = 0;
};

struct LesionRecord {
    std::string lesion_id;
    std::vector<float> image;       // pixel values in [0,1], length image_dim
    Vector lesion_meta;             // one value per feature; 0 where missing
    std::vector<bool> lesion_missing;
    int label = 0;                  // 0 = benign by convention
    bool labeled = true;            // cleared by subsample_labels
};

struct PatientRecord {
    std::string patient_id;
    Vector patient_meta;
    std::vector<bool> patient_missing;
    std::vector<LesionRecord> lesions;
};

struct Dataset {
    std::vector<PatientRecord> patients;
    std::size_t image_dim = 0;
    std::size_t num_classes = 2;
    std::vector<FeatureSpec> patient_features;
    std::vector<FeatureSpec> lesion_features;

    std::size_t lesion_count() const;
};

struct GenConfig {
    std::size_t num_patients = 200;
    std::size_t lesions_min = 8;
    std::size_t lesions_max = 12;
    std::size_t image_dim = 64;
    std::size_t patient_meta_dim = 8;
    std::size_t lesion_meta_dim = 8;
    std::size_t latent_dim = 6;
    double malignant_rate = 0.15;   // in (0,1)
    double missing_rate = 0.05;     // in [0,1)
    double noise_scale = 0.5;
    // Scales one row of the lesion-meta projection so a single feature
    // carries an outsized share of the latent signal (off at 1.0).
    double planted_feature_boost = 1.0;
    std::size_t planted_feature_index = 0;
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

enum class SplitMode { LesionLevel, PatientDisjoint };

struct SplitSpec {
    SplitMode mode = SplitMode::LesionLevel;
    double train_fraction = 0.9;
    std::uint64_t seed = 0;
};

// Seeded hierarchical generator with a planted patient-level latent factor.
Dataset generate(const GenConfig& cfg);

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

// Keeps ceil(fraction * n) labels, at least one per class present in `train`;
// the rest of the lesions get labeled = false.
Dataset subsample_labels(const Dataset& train, double fraction, std::uint64_t seed);

} // namespace nestcl
