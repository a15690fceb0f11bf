#pragma once

#include <vector>

#include "nestcl/encoders.hpp"
#include "nestcl/numerics.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

struct LossConfig {
    double tau = 0.1;      // temperature, > 0
    double lambda = 0.9;   // inner/outer weight, in [0, 1]

    void validate() const; // throws ConfigError
};

// Concat -> mean-pool -> linear projection of a patient's lesion pairs.
struct FusionParams {
    Matrix weight; // 2D x D
    Matrix bias;   // 1 x D

    static FusionParams create(std::size_t embed_dim, Rng& rng);
    FusionParams zeros_clone() const;
    void for_each_param(const ParamVisitor& f);
    void for_each_param_const(const ConstParamVisitor& f) const;
};

struct FuseTrace {
    Vector mean_concat; // 2D
    std::size_t n_lesions = 0;
};

Vector fuse_patient(const Matrix& w_rows, const Matrix& h_rows, const FusionParams& fusion,
                    FuseTrace* trace = nullptr);

// Pushes d_z back through the fusion: accumulates into dW/dH (n x D each) and
// the fusion parameter gradients.
void fuse_backward(const FuseTrace& trace, const FusionParams& fusion,
                   std::span<const double> d_z, Matrix& d_w, Matrix& d_h,
                   FusionParams& d_fusion);

// Symmetric InfoNCE over aligned rows: positives on the diagonal of the
// cosine/tau score matrix, both softmax directions averaged, gradients exact
// through the cosine normalization.
struct InfoNceResult {
    double loss = 0.0;
    Matrix d_w, d_h;
};

InfoNceResult info_nce_symmetric(const Matrix& w_rows, const Matrix& h_rows, double tau);

// Flat single-level variant: one InfoNCE across all lesions of the batch.
InfoNceResult flat_loss(const Matrix& image_rows, const Matrix& meta_rows, double tau);

struct PatientTensors {
    Matrix w; // n_p x D image embeddings
    Matrix h; // n_p x D lesion-meta embeddings
};

struct InnerLossResult {
    double loss = 0.0;                 // mean over patients
    std::vector<Matrix> d_w, d_h;      // per patient, scaled by 1/B
};

InnerLossResult inner_lesion_loss(const std::vector<PatientTensors>& batch, double tau);

InfoNceResult outer_patient_loss(const Matrix& z_rows, const Matrix& x_rows, double tau);

struct TotalLossResult {
    double total = 0.0;
    double inner = 0.0;
    double outer = 0.0;
    std::vector<Matrix> d_w, d_h;  // per patient; inner + fusion paths summed
    Matrix d_x;                    // B x D
    FusionParams d_fusion;
    Matrix z_rows;                 // B x D fused patient vectors
};

// lambda * inner + (1 - lambda) * outer; the outer gradient reaches W and H
// through the fusion in addition to the direct inner-loss path.
TotalLossResult total_loss(const std::vector<PatientTensors>& batch, const Matrix& x_rows,
                           const LossConfig& cfg, const FusionParams& fusion);

} // namespace nestcl
