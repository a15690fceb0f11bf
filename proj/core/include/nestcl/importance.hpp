#pragma once

#include <string>
#include <vector>

#include "nestcl/model.hpp"
#include "nestcl/numerics.hpp"

namespace nestcl {

struct ImportanceReport {
    std::vector<std::string> feature_names;
    Vector importance; // >= 0, sums to 1
};

// Per matrix: mask the diagonal, renormalize each row over the remaining
// receivers, average the received attention per column, then average over the
// batch and normalize to sum 1.
ImportanceReport importance_from_attention(const std::vector<Matrix>& attention_batch,
                                           const std::vector<std::string>& feature_names);

// Attention collected from the selected tabular encoder over every record.
ImportanceReport dataset_importance(const Model& model, const Dataset& dataset,
                                    bool patient_encoder);

} // namespace nestcl
