#include "nestcl/loss.hpp"

#include <cmath>
#include <string>

#include "nestcl/errors.hpp"

namespace nestcl {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
}

FusionParams FusionParams::create(std::size_t embed_dim, Rng& rng) {
    FusionParams p;
    p.weight = Matrix(2 * embed_dim, embed_dim);
    p.bias = Matrix(1, embed_dim);
    const double bound = std::sqrt(6.0 / static_cast<double>(3 * embed_dim));
    for (double& x : p.weight.data) x = rng.uniform(-bound, bound);
    return p;
}

FusionParams FusionParams::zeros_clone() const {
    FusionParams out = *this;
    std::fill(out.weight.data.begin(), out.weight.data.end(), 0.0);
    std::fill(out.bias.data.begin(), out.bias.data.end(), 0.0);
    return out;
}

void FusionParams::for_each_param(const ParamVisitor& f) {
    f("fusion_weight", Partition::Fusion, weight);
    f("fusion_bias", Partition::Fusion, bias);
}

void FusionParams::for_each_param_const(const ConstParamVisitor& f) const {
    const_cast<FusionParams*>(this)->for_each_param(
        [&](const std::string& name, Partition p, Matrix& m) { f(name, p, m); });
}

Vector fuse_patient(const Matrix& w_rows, const Matrix& h_rows, const FusionParams& fusion,
                    FuseTrace* trace) {
    if (w_rows.rows != h_rows.rows || w_rows.rows == 0)
        throw ShapeError("fuse_patient needs matching, non-empty row counts");
    const std::size_t d = fusion.weight.cols;
    if (w_rows.cols != d || h_rows.cols != d || fusion.weight.rows != 2 * d)
        throw ShapeError("fuse_patient embedding width mismatch");

    const auto n = static_cast<double>(w_rows.rows);
    Vector mean_concat(2 * d, 0.0);
    for (std::size_t l = 0; l < w_rows.rows; ++l) {
        const auto wr = w_rows.row(l);
        const auto hr = h_rows.row(l);
        for (std::size_t c = 0; c < d; ++c) {
            mean_concat[c] += wr[c];
            mean_concat[d + c] += hr[c];
        }
    }
    for (double& x : mean_concat) x /= n;

    Vector z(fusion.bias.data);
    for (std::size_t r = 0; r < 2 * d; ++r) {
        const double m = mean_concat[r];
        if (m == 0.0) continue;
        const auto row = fusion.weight.row(r);
        for (std::size_t c = 0; c < d; ++c) z[c] += m * row[c];
    }

    if (trace) {
        trace->mean_concat = std::move(mean_concat);
        trace->n_lesions = w_rows.rows;
    }
    return z;
}

void fuse_backward(const FuseTrace& trace, const FusionParams& fusion,
                   std::span<const double> d_z, Matrix& d_w, Matrix& d_h,
                   FusionParams& d_fusion) {
    const std::size_t d = fusion.weight.cols;
    if (trace.mean_concat.size() != 2 * d || trace.n_lesions == 0)
        throw TraceError("fusion trace does not match parameters");
    if (d_w.rows != trace.n_lesions || d_h.rows != trace.n_lesions)
        throw ShapeError("fusion gradient row count mismatch");

    for (std::size_t r = 0; r < 2 * d; ++r) {
        const double m = trace.mean_concat[r];
        auto grad_row = d_fusion.weight.row(r);
        for (std::size_t c = 0; c < d; ++c) grad_row[c] += m * d_z[c];
    }
    for (std::size_t c = 0; c < d; ++c) d_fusion.bias(0, c) += d_z[c];

    Vector d_mean(2 * d, 0.0);
    for (std::size_t r = 0; r < 2 * d; ++r) {
        d_mean[r] = dot(fusion.weight.row(r), d_z);
    }
    const double inv_n = 1.0 / static_cast<double>(trace.n_lesions);
    for (std::size_t l = 0; l < trace.n_lesions; ++l) {
        auto dw = d_w.row(l);
        auto dh = d_h.row(l);
        for (std::size_t c = 0; c < d; ++c) {
            dw[c] += d_mean[c] * inv_n;
            dh[c] += d_mean[d + c] * inv_n;
        }
    }
}

InfoNceResult info_nce_symmetric(const Matrix& w_rows, const Matrix& h_rows, double tau) {
    if (!w_rows.same_shape(h_rows))
        throw ShapeError("info_nce row shapes differ");
    if (w_rows.rows == 0) throw ShapeError("info_nce needs at least one row");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");

    const std::size_t n = w_rows.rows;
    const std::size_t d = w_rows.cols;

    std::vector<double> w_norm(n), h_norm(n);
    Matrix w_hat(n, d), h_hat(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        w_norm[i] = norm2(w_rows.row(i));
        h_norm[i] = norm2(h_rows.row(i));
        if (!(w_norm[i] >= 1e-9) || !(h_norm[i] >= 1e-9))
            throw DegenerateVector("info_nce row " + std::to_string(i) + " has near-zero norm");
        for (std::size_t c = 0; c < d; ++c) {
            w_hat(i, c) = w_rows(i, c) / w_norm[i];
            h_hat(i, c) = h_rows(i, c) / h_norm[i];
        }
    }

    Matrix cos(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            cos(i, j) = dot(w_hat.row(i), h_hat.row(j));
        }
    }

    // Row and column softmaxes of S = cos / tau.
    Matrix scores(n, n);
    for (std::size_t i = 0; i < n * n; ++i) scores.data[i] = cos.data[i] / tau;

    Matrix p_row = softmax_rows(scores);
    Matrix p_col(n, n);
    {
        Vector col(n);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) col[i] = scores(i, j);
            softmax_row_inplace(col);
            for (std::size_t i = 0; i < n; ++i) p_col(i, j) = col[i];
        }
    }

    double loss = 0.0;
    {
        Vector buf(n);
        for (std::size_t i = 0; i < n; ++i) {
            loss += log_sum_exp_row(scores.row(i)) - scores(i, i);
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = scores(i, j);
            loss += log_sum_exp_row(buf) - scores(j, j);
        }
        loss /= 2.0 * static_cast<double>(n);
    }

    // d loss / d cos(i,j).
    Matrix d_cos(n, n);
    const double scale = 1.0 / (2.0 * static_cast<double>(n) * tau);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double delta = i == j ? 2.0 : 0.0;
            d_cos(i, j) = scale * (p_row(i, j) + p_col(i, j) - delta);
        }
    }

    // Exact cosine backward: d cos(i,j)/d w_i = (h_hat_j - cos_ij w_hat_i)/|w_i|.
    InfoNceResult result;
    result.loss = loss;
    result.d_w = Matrix(n, d, 0.0);
    result.d_h = Matrix(n, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto dw = result.d_w.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double g = d_cos(i, j);
            if (g == 0.0) continue;
            const auto hj = h_hat.row(j);
            const auto wi = w_hat.row(i);
            const double c = cos(i, j);
            for (std::size_t a = 0; a < d; ++a) {
                dw[a] += g * (hj[a] - c * wi[a]) / w_norm[i];
            }
            auto dh = result.d_h.row(j);
            for (std::size_t a = 0; a < d; ++a) {
                dh[a] += g * (wi[a] - c * hj[a]) / h_norm[j];
            }
        }
    }
    return result;
}

InfoNceResult flat_loss(const Matrix& image_rows, const Matrix& meta_rows, double tau) {
    return info_nce_symmetric(image_rows, meta_rows, tau);
}

InnerLossResult inner_lesion_loss(const std::vector<PatientTensors>& batch, double tau) {
    if (batch.empty()) throw ShapeError("inner_lesion_loss needs at least one patient");
    InnerLossResult result;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& patient : batch) {
        auto per_patient = info_nce_symmetric(patient.w, patient.h, tau);
        result.loss += per_patient.loss * inv_b;
        for (double& g : per_patient.d_w.data) g *= inv_b;
        for (double& g : per_patient.d_h.data) g *= inv_b;
        result.d_w.push_back(std::move(per_patient.d_w));
        result.d_h.push_back(std::move(per_patient.d_h));
    }
    return result;
}

InfoNceResult outer_patient_loss(const Matrix& z_rows, const Matrix& x_rows, double tau) {
    return info_nce_symmetric(z_rows, x_rows, tau);
}

TotalLossResult total_loss(const std::vector<PatientTensors>& batch, const Matrix& x_rows,
                           const LossConfig& cfg, const FusionParams& fusion) {
    cfg.validate();
    if (batch.size() != x_rows.rows)
        throw ShapeError("total_loss: patient-count mismatch between batch and X");

    const std::size_t b = batch.size();
    const std::size_t d = fusion.weight.cols;

    TotalLossResult result;
    result.d_fusion = fusion.zeros_clone();

    std::vector<FuseTrace> fuse_traces(b);
    result.z_rows = Matrix(b, d);
    for (std::size_t p = 0; p < b; ++p) {
        const Vector z = fuse_patient(batch[p].w, batch[p].h, fusion, &fuse_traces[p]);
        for (std::size_t c = 0; c < d; ++c) result.z_rows(p, c) = z[c];
    }

    auto inner = inner_lesion_loss(batch, cfg.tau);
    auto outer = outer_patient_loss(result.z_rows, x_rows, cfg.tau);

    result.inner = inner.loss;
    result.outer = outer.loss;
    result.total = cfg.lambda * inner.loss + (1.0 - cfg.lambda) * outer.loss;

    result.d_w.reserve(b);
    result.d_h.reserve(b);
    for (std::size_t p = 0; p < b; ++p) {
        Matrix dw = std::move(inner.d_w[p]);
        Matrix dh = std::move(inner.d_h[p]);
        for (double& g : dw.data) g *= cfg.lambda;
        for (double& g : dh.data) g *= cfg.lambda;
        result.d_w.push_back(std::move(dw));
        result.d_h.push_back(std::move(dh));
    }

    const double outer_weight = 1.0 - cfg.lambda;
    result.d_x = std::move(outer.d_h);
    for (double& g : result.d_x.data) g *= outer_weight;

    Vector d_z(d);
    for (std::size_t p = 0; p < b; ++p) {
        for (std::size_t c = 0; c < d; ++c) d_z[c] = outer_weight * outer.d_w(p, c);
        fuse_backward(fuse_traces[p], fusion, d_z, result.d_w[p], result.d_h[p],
                      result.d_fusion);
    }
    return result;
}

} // namespace nestcl
