#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestcl/data.hpp"
#include "nestcl/encoders.hpp"
#include "nestcl/loss.hpp"

namespace nestcl {

// Nested: image + lesion-meta + patient-meta encoders with a fusion head.
// Flat: image encoder plus one tabular encoder over the concatenated
// lesion+patient metadata, trained with a single batch-wide loss.
enum class Architecture { Nested, Flat };

struct ModelDims {
    std::size_t embed_dim = 32;  // D
    std::size_t token_dim = 16;
    std::size_t hidden_dim = 64;
};

struct Model {
    Architecture arch = Architecture::Nested;
    ModelDims dims;
    ImageEncoder image;
    TabularEncoder lesion_tab;   // flat: combined lesion+patient features
    TabularEncoder patient_tab;  // nested only
    FusionParams fusion;         // nested only

    bool nested() const { return arch == Architecture::Nested; }
};

Model init_model(const Dataset& dataset, const ModelDims& dims, Architecture arch,
                 std::uint64_t init_seed);

// Flat per-lesion feature row for the Flat architecture: lesion features
// followed by the owner's patient features.
std::vector<FeatureSpec> combined_feature_specs(const Dataset& dataset);
void combined_features(const PatientRecord& patient, const LesionRecord& lesion,
                       Vector& values, std::vector<bool>& missing);

// Deterministic flat layout over all model parameters, in component order
// image, lesion_tab, patient_tab, fusion.
struct SegmentInfo {
    std::string component;
    std::string name;
    Partition partition = Partition::Body;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0; // in scalars
};

std::vector<SegmentInfo> model_segments(const Model& model);
std::size_t model_param_count(const Model& model);
std::vector<double> flatten_params(const Model& model);
void unflatten_params(Model& model, std::span<const double> flat);
std::vector<std::uint8_t> model_trainable_mask(const Model& model, FreezeMode mode);

const char* partition_name(Partition p);

// Frozen-encoder embeddings of a whole dataset.
struct DatasetEmbeddings {
    Matrix image;          // n x D
    Matrix lesion_meta;    // n x D (flat: combined-meta embeddings)
    Matrix patient_meta;   // n x D, owner's patient embedding per lesion (nested)
    Matrix patient_rows;   // P x D (nested)
    Matrix fused;          // P x D, fusion over every lesion of the patient (nested)
    std::vector<std::string> lesion_ids;
    std::vector<std::string> patient_ids;      // per patient
    std::vector<std::size_t> lesion_owner;     // lesion -> patient index
    std::vector<int> labels;
    std::vector<bool> labeled;
};

DatasetEmbeddings embed_dataset(const Model& model, const Dataset& dataset);

// Attention matrices of one tabular encoder over every record (lesion or
// patient level), in dataset order.
std::vector<Matrix> collect_attention(const Model& model, const Dataset& dataset,
                                      bool patient_level);

} // namespace nestcl
