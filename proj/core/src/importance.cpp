#include "nestcl/importance.hpp"

#include <string>

#include "nestcl/errors.hpp"

namespace nestcl {

ImportanceReport importance_from_attention(const std::vector<Matrix>& attention_batch,
                                           const std::vector<std::string>& feature_names) {
    if (attention_batch.empty()) throw ShapeError("importance needs at least one matrix");
    const std::size_t t = attention_batch.front().rows;
    if (t < 2) throw ShapeError("importance needs T >= 2 tokens");
    if (feature_names.size() != t)
        throw ShapeError("importance: feature name count does not match T");

    Vector mean_received(t, 0.0);
    for (const auto& attn : attention_batch) {
        if (attn.rows != t || attn.cols != t)
            throw ShapeError("importance: attention matrices differ in shape");
        for (std::size_t i = 0; i < t; ++i) {
            double off_diag = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                if (j != i) off_diag += attn(i, j);
            }
            if (!(off_diag > 0.0))
                throw DegenerateRow("attention row " + std::to_string(i) +
                                    " has zero off-diagonal mass");
            for (std::size_t j = 0; j < t; ++j) {
                if (j != i) mean_received[j] += attn(i, j) / off_diag;
            }
        }
    }

    // Each receiver j saw T-1 querying rows per matrix.
    const double scale =
        1.0 / (static_cast<double>(t - 1) * static_cast<double>(attention_batch.size()));
    double sum = 0.0;
    for (double& x : mean_received) {
        x *= scale;
        sum += x;
    }
    ImportanceReport report;
    report.feature_names = feature_names;
    report.importance.resize(t);
    for (std::size_t j = 0; j < t; ++j) report.importance[j] = mean_received[j] / sum;
    return report;
}

ImportanceReport dataset_importance(const Model& model, const Dataset& dataset,
                                    bool patient_encoder) {
    const auto maps = collect_attention(model, dataset, patient_encoder);
    const auto& encoder = patient_encoder ? model.patient_tab : model.lesion_tab;
    return importance_from_attention(maps, encoder.token_names());
}

} // namespace nestcl
