#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nestcl/data.hpp"
#include "nestcl/numerics.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

// Freeze boundary. Embedding is the first input transform and stays trainable
// during continual pre-training; Body is everything deeper and gets frozen;
// Stats are standardization constants and are never trainable.
enum class Partition { Embedding, Body, Stats, Fusion };

enum class FreezeMode { All, EmbeddingOnly };

bool partition_trainable(Partition partition, FreezeMode mode);

using ParamVisitor = std::function<void(const std::string&, Partition, Matrix&)>;
using ConstParamVisitor = std::function<void(const std::string&, Partition, const Matrix&)>;

// ---------------------------------------------------------------------------
// Image encoder: linear patch-embedding analog, two tanh hidden layers, final
// linear head to the shared embedding width.

struct ImageTrace {
    Vector input;
    Vector pre1, act1;
    Vector pre2, act2;
};

struct ImageEncoder {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;

    Matrix w1, b1; // embedding layer
    Matrix w2, b2; // body
    Matrix w3, b3; // body

    static ImageEncoder create(std::size_t input_dim, std::size_t hidden_dim,
                               std::size_t embed_dim, Rng& rng);

    Vector forward(std::span<const double> image, ImageTrace* trace = nullptr) const;

    // Accumulates parameter gradients into `grads` (a zeroed shape-clone of
    // this encoder); optionally returns the input gradient.
    void backward(const ImageTrace& trace, std::span<const double> d_out,
                  ImageEncoder& grads, Vector* d_input = nullptr) const;

    ImageEncoder zeros_clone() const;
    void for_each_param(const ParamVisitor& f);
    void for_each_param_const(const ConstParamVisitor& f) const;
};

// ---------------------------------------------------------------------------
// Tabular encoder: per-feature token embedding, one single-head self-attention
// block over the feature tokens, mean pooling, linear head.
//
// Continuous features are standardized with stored stats, imputed to 0 when
// missing, and paired with a 0/1 missing-indicator token. Categorical features
// use a per-feature lookup table whose last row is the missing category.

struct TabularTrace {
    std::vector<double> token_scalars;  // per linear token
    std::vector<std::size_t> cat_codes; // per categorical feature
    Matrix tokens;                      // T x k
    Matrix q, k, v;                     // T x k
    Matrix attention;                   // T x T, rows sum to 1
    Matrix context;                     // T x k
    Vector pooled;                      // k
};

struct TabularEncoder {
    std::vector<FeatureSpec> features;
    std::size_t token_dim = 16;
    std::size_t embed_dim = 32;

    // Embedding partition. Linear tokens are laid out feature-major: for each
    // continuous feature its value token row then its indicator token row.
    Matrix token_weight; // n_linear_tokens x k
    Matrix token_bias;   // n_linear_tokens x k
    std::vector<Matrix> cat_tables; // per categorical feature, (card+1) x k

    // Standardization constants (per original feature; identity for
    // categorical slots).
    Matrix feat_mean, feat_std; // 1 x n_features

    // Body partition.
    Matrix wq, bq, wk, bk, wv, bv, wo, bo; // k x k projections, 1 x k biases
    Matrix wf, bf;                         // k x embed_dim head, 1 x embed_dim

    static TabularEncoder create(const std::vector<FeatureSpec>& features,
                                 std::size_t token_dim, std::size_t embed_dim, Rng& rng);

    // Total token count T after missing-indicator expansion.
    std::size_t token_count() const;
    // Expanded token names: feature name, plus "<name>_missing" for each
    // continuous feature.
    std::vector<std::string> token_names() const;

    // Fits per-feature mean/std over the given rows (non-missing entries).
    void fit_standardization(const std::vector<const PatientRecord*>& patients, bool lesion_level);
    void fit_standardization_rows(const std::vector<std::pair<const Vector*, const std::vector<bool>*>>& rows);

    Vector forward(const Vector& values, const std::vector<bool>& missing,
                   TabularTrace* trace = nullptr) const;

    void backward(const TabularTrace& trace, std::span<const double> d_out,
                  TabularEncoder& grads, Vector* d_values = nullptr) const;

    TabularEncoder zeros_clone() const;
    void for_each_param(const ParamVisitor& f);
    void for_each_param_const(const ConstParamVisitor& f) const;
};

// Trainability mask over a single encoder's parameters in for_each_param
// order, one flag per scalar.
template <typename Encoder>
std::vector<std::uint8_t> set_trainable(const Encoder& encoder, FreezeMode mode) {
    std::vector<std::uint8_t> mask;
    encoder.for_each_param_const([&](const std::string&, Partition partition, const Matrix& m) {
        mask.insert(mask.end(), m.size(),
                    partition_trainable(partition, mode) ? std::uint8_t{1} : std::uint8_t{0});
    });
    return mask;
}

Vector to_double(const std::vector<float>& values);

} // namespace nestcl
