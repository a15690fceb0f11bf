#include "nestcl/encoders.hpp"

#include <cmath>
#include <string>

#include "nestcl/errors.hpp"

namespace nestcl {

namespace {

void xavier_fill(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& x : m.data) x = rng.uniform(-bound, bound);
}

// out[j] += sum_i v[i] * w(i, j)
void add_vec_mat(std::span<const double> v, const Matrix& w, std::span<double> out) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double vi = v[i];
        if (vi == 0.0) continue;
        const auto row = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) out[j] += vi * row[j];
    }
}

// out[i] += sum_j w(i, j) * v[j]
void add_mat_vec(const Matrix& w, std::span<const double> v, std::span<double> out) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        out[i] += dot(w.row(i), v);
    }
}

// grad(i, j) += a[i] * b[j]
void add_outer(std::span<const double> a, std::span<const double> b, Matrix& grad) {
    for (std::size_t i = 0; i < grad.rows; ++i) {
        const double ai = a[i];
        if (ai == 0.0) continue;
        auto row = grad.row(i);
        for (std::size_t j = 0; j < grad.cols; ++j) row[j] += ai * b[j];
    }
}

void add_into(std::span<const double> src, std::span<double> dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

} // namespace

bool partition_trainable(Partition partition, FreezeMode mode) {
    switch (partition) {
        case Partition::Embedding: return true;
        case Partition::Body: return mode == FreezeMode::All;
        case Partition::Stats: return false;
        case Partition::Fusion: return true;
    }
    return false;
}

Vector to_double(const std::vector<float>& values) {
    Vector out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<double>(values[i]);
    return out;
}

// ---------------------------------------------------------------------------
// ImageEncoder

ImageEncoder ImageEncoder::create(std::size_t input_dim, std::size_t hidden_dim,
                                  std::size_t embed_dim, Rng& rng) {
    if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1)
        throw ConfigError("image encoder dims must be >= 1");
    ImageEncoder enc;
    enc.input_dim = input_dim;
    enc.hidden_dim = hidden_dim;
    enc.embed_dim = embed_dim;
    enc.w1 = Matrix(input_dim, hidden_dim);
    enc.b1 = Matrix(1, hidden_dim);
    enc.w2 = Matrix(hidden_dim, hidden_dim);
    enc.b2 = Matrix(1, hidden_dim);
    enc.w3 = Matrix(hidden_dim, embed_dim);
    enc.b3 = Matrix(1, embed_dim);
    xavier_fill(enc.w1, input_dim, hidden_dim, rng);
    xavier_fill(enc.w2, hidden_dim, hidden_dim, rng);
    xavier_fill(enc.w3, hidden_dim, embed_dim, rng);
    return enc;
}

Vector ImageEncoder::forward(std::span<const double> image, ImageTrace* trace) const {
    if (image.size() != input_dim)
        throw ShapeError("image length " + std::to_string(image.size()) + ", expected " +
                         std::to_string(input_dim));
    Vector pre1(b1.data);
    add_vec_mat(image, w1, pre1);
    Vector act1(hidden_dim);
    for (std::size_t j = 0; j < hidden_dim; ++j) act1[j] = std::tanh(pre1[j]);

    Vector pre2(b2.data);
    add_vec_mat(act1, w2, pre2);
    Vector act2(hidden_dim);
    for (std::size_t j = 0; j < hidden_dim; ++j) act2[j] = std::tanh(pre2[j]);

    Vector out(b3.data);
    add_vec_mat(act2, w3, out);

    if (trace) {
        trace->input.assign(image.begin(), image.end());
        trace->pre1 = std::move(pre1);
        trace->act1 = act1;
        trace->pre2 = std::move(pre2);
        trace->act2 = act2;
    }
    return out;
}

void ImageEncoder::backward(const ImageTrace& trace, std::span<const double> d_out,
                            ImageEncoder& grads, Vector* d_input) const {
    if (trace.input.size() != input_dim || trace.act1.size() != hidden_dim ||
        trace.act2.size() != hidden_dim) {
        throw TraceError("image trace does not match encoder shape");
    }
    if (d_out.size() != embed_dim) throw ShapeError("upstream gradient width");

    add_outer(trace.act2, d_out, grads.w3);
    add_into(d_out, grads.b3.row(0));
    Vector d_act2(hidden_dim, 0.0);
    add_mat_vec(w3, d_out, d_act2);

    Vector d_pre2(hidden_dim);
    for (std::size_t j = 0; j < hidden_dim; ++j)
        d_pre2[j] = d_act2[j] * (1.0 - trace.act2[j] * trace.act2[j]);

    add_outer(trace.act1, d_pre2, grads.w2);
    add_into(d_pre2, grads.b2.row(0));
    Vector d_act1(hidden_dim, 0.0);
    add_mat_vec(w2, d_pre2, d_act1);

    Vector d_pre1(hidden_dim);
    for (std::size_t j = 0; j < hidden_dim; ++j)
        d_pre1[j] = d_act1[j] * (1.0 - trace.act1[j] * trace.act1[j]);

    add_outer(trace.input, d_pre1, grads.w1);
    add_into(d_pre1, grads.b1.row(0));

    if (d_input) {
        d_input->assign(input_dim, 0.0);
        add_mat_vec(w1, d_pre1, *d_input);
    }
}

ImageEncoder ImageEncoder::zeros_clone() const {
    ImageEncoder out = *this;
    out.for_each_param([](const std::string&, Partition, Matrix& m) {
        std::fill(m.data.begin(), m.data.end(), 0.0);
    });
    return out;
}

void ImageEncoder::for_each_param(const ParamVisitor& f) {
    f("w1", Partition::Embedding, w1);
    f("b1", Partition::Embedding, b1);
    f("w2", Partition::Body, w2);
    f("b2", Partition::Body, b2);
    f("w3", Partition::Body, w3);
    f("b3", Partition::Body, b3);
}

void ImageEncoder::for_each_param_const(const ConstParamVisitor& f) const {
    const_cast<ImageEncoder*>(this)->for_each_param(
        [&](const std::string& name, Partition p, Matrix& m) { f(name, p, m); });
}

// ---------------------------------------------------------------------------
// TabularEncoder

TabularEncoder TabularEncoder::create(const std::vector<FeatureSpec>& features,
                                      std::size_t token_dim, std::size_t embed_dim, Rng& rng) {
    if (features.empty()) throw ConfigError("tabular encoder needs at least one feature");
    if (token_dim < 1 || embed_dim < 1) throw ConfigError("tabular encoder dims must be >= 1");
    TabularEncoder enc;
    enc.features = features;
    enc.token_dim = token_dim;
    enc.embed_dim = embed_dim;

    std::size_t linear_tokens = 0;
    for (const auto& f : features) {
        if (!f.categorical) linear_tokens += 2;
    }
    enc.token_weight = Matrix(linear_tokens, token_dim);
    enc.token_bias = Matrix(linear_tokens, token_dim);
    xavier_fill(enc.token_weight, 1, token_dim, rng);
    xavier_fill(enc.token_bias, 1, token_dim, rng);
    for (const auto& f : features) {
        if (f.categorical) {
            Matrix table(f.cardinality + 1, token_dim);
            xavier_fill(table, 1, token_dim, rng);
            enc.cat_tables.push_back(std::move(table));
        }
    }
    enc.feat_mean = Matrix(1, features.size(), 0.0);
    enc.feat_std = Matrix(1, features.size(), 1.0);

    enc.wq = Matrix(token_dim, token_dim);
    enc.bq = Matrix(1, token_dim);
    enc.wk = Matrix(token_dim, token_dim);
    enc.bk = Matrix(1, token_dim);
    enc.wv = Matrix(token_dim, token_dim);
    enc.bv = Matrix(1, token_dim);
    enc.wo = Matrix(token_dim, token_dim);
    enc.bo = Matrix(1, token_dim);
    xavier_fill(enc.wq, token_dim, token_dim, rng);
    xavier_fill(enc.wk, token_dim, token_dim, rng);
    xavier_fill(enc.wv, token_dim, token_dim, rng);
    xavier_fill(enc.wo, token_dim, token_dim, rng);
    enc.wf = Matrix(token_dim, embed_dim);
    enc.bf = Matrix(1, embed_dim);
    xavier_fill(enc.wf, token_dim, embed_dim, rng);
    return enc;
}

std::size_t TabularEncoder::token_count() const {
    std::size_t t = 0;
    for (const auto& f : features) t += f.categorical ? 1 : 2;
    return t;
}

std::vector<std::string> TabularEncoder::token_names() const {
    std::vector<std::string> names;
    for (const auto& f : features) {
        names.push_back(f.name);
        if (!f.categorical) names.push_back(f.name + "_missing");
    }
    return names;
}

void TabularEncoder::fit_standardization_rows(
    const std::vector<std::pair<const Vector*, const std::vector<bool>*>>& rows) {
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (features[j].categorical) continue;
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& [values, missing] : rows) {
            if (!(*missing)[j]) {
                sum += (*values)[j];
                ++count;
            }
        }
        const double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
        double var = 0.0;
        for (const auto& [values, missing] : rows) {
            if (!(*missing)[j]) {
                const double d = (*values)[j] - mean;
                var += d * d;
            }
        }
        const double sd = count > 0 ? std::sqrt(var / static_cast<double>(count)) : 0.0;
        feat_mean(0, j) = mean;
        feat_std(0, j) = sd > 1e-12 ? sd : 1.0;
    }
}

void TabularEncoder::fit_standardization(const std::vector<const PatientRecord*>& patients,
                                         bool lesion_level) {
    std::vector<std::pair<const Vector*, const std::vector<bool>*>> rows;
    for (const auto* p : patients) {
        if (lesion_level) {
            for (const auto& les : p->lesions) {
                rows.emplace_back(&les.lesion_meta, &les.lesion_missing);
            }
        } else {
            rows.emplace_back(&p->patient_meta, &p->patient_missing);
        }
    }
    fit_standardization_rows(rows);
}

Vector TabularEncoder::forward(const Vector& values, const std::vector<bool>& missing,
                               TabularTrace* trace) const {
    if (values.size() != features.size() || missing.size() != features.size())
        throw ShapeError("feature count " + std::to_string(values.size()) + ", expected " +
                         std::to_string(features.size()));

    const std::size_t T = token_count();
    const std::size_t k_dim = token_dim;
    Matrix tokens(T, k_dim);
    std::vector<double> token_scalars;
    std::vector<std::size_t> cat_codes;

    std::size_t token = 0;
    std::size_t linear_row = 0;
    std::size_t cat_index = 0;
    for (std::size_t j = 0; j < features.size(); ++j) {
        const auto& spec = features[j];
        if (spec.categorical) {
            std::size_t code = spec.cardinality; // missing category
            if (!missing[j]) {
                const double raw = values[j];
                const double rounded = std::nearbyint(raw);
                if (raw != rounded || raw < 0.0 ||
                    static_cast<std::size_t>(rounded) >= spec.cardinality) {
                    throw EncodingError("unknown category code for feature " + spec.name);
                }
                code = static_cast<std::size_t>(rounded);
            }
            const auto& table = cat_tables[cat_index];
            auto out_row = tokens.row(token);
            const auto src = table.row(code);
            for (std::size_t c = 0; c < k_dim; ++c) out_row[c] = src[c];
            cat_codes.push_back(code);
            ++cat_index;
            ++token;
        } else {
            const double standardized =
                missing[j] ? 0.0 : (values[j] - feat_mean(0, j)) / feat_std(0, j);
            const double indicator = missing[j] ? 1.0 : 0.0;
            for (const double scalar : {standardized, indicator}) {
                auto out_row = tokens.row(token);
                const auto w_row = token_weight.row(linear_row);
                const auto b_row = token_bias.row(linear_row);
                for (std::size_t c = 0; c < k_dim; ++c) out_row[c] = scalar * w_row[c] + b_row[c];
                token_scalars.push_back(scalar);
                ++linear_row;
                ++token;
            }
        }
    }

    Matrix q(T, k_dim), k(T, k_dim), v(T, k_dim);
    for (std::size_t i = 0; i < T; ++i) {
        auto qr = q.row(i);
        auto kr = k.row(i);
        auto vr = v.row(i);
        for (std::size_t c = 0; c < k_dim; ++c) {
            qr[c] = bq(0, c);
            kr[c] = bk(0, c);
            vr[c] = bv(0, c);
        }
        add_vec_mat(tokens.row(i), wq, qr);
        add_vec_mat(tokens.row(i), wk, kr);
        add_vec_mat(tokens.row(i), wv, vr);
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(k_dim));
    Matrix attention(T, T);
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < T; ++j) {
            attention(i, j) = dot(q.row(i), k.row(j)) * inv_sqrt;
        }
        softmax_row_inplace(attention.row(i));
    }

    Matrix context(T, k_dim, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        auto ctx = context.row(i);
        for (std::size_t j = 0; j < T; ++j) {
            const double a = attention(i, j);
            const auto vr = v.row(j);
            for (std::size_t c = 0; c < k_dim; ++c) ctx[c] += a * vr[c];
        }
    }

    Vector pooled(k_dim, 0.0);
    {
        Vector o_row(k_dim);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t c = 0; c < k_dim; ++c) o_row[c] = bo(0, c);
            add_vec_mat(context.row(i), wo, o_row);
            for (std::size_t c = 0; c < k_dim; ++c) pooled[c] += o_row[c];
        }
        for (std::size_t c = 0; c < k_dim; ++c) pooled[c] /= static_cast<double>(T);
    }

    Vector out(bf.data);
    add_vec_mat(pooled, wf, out);

    if (trace) {
        trace->token_scalars = std::move(token_scalars);
        trace->cat_codes = std::move(cat_codes);
        trace->tokens = std::move(tokens);
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->attention = std::move(attention);
        trace->context = std::move(context);
        trace->pooled = std::move(pooled);
    }
    return out;
}

void TabularEncoder::backward(const TabularTrace& trace, std::span<const double> d_out,
                              TabularEncoder& grads, Vector* d_values) const {
    const std::size_t T = token_count();
    const std::size_t k_dim = token_dim;
    if (trace.tokens.rows != T || trace.tokens.cols != k_dim ||
        trace.attention.rows != T || trace.pooled.size() != k_dim) {
        throw TraceError("tabular trace does not match encoder shape");
    }
    if (d_out.size() != embed_dim) throw ShapeError("upstream gradient width");

    // Head.
    add_outer(trace.pooled, d_out, grads.wf);
    add_into(d_out, grads.bf.row(0));
    Vector d_pooled(k_dim, 0.0);
    add_mat_vec(wf, d_out, d_pooled);

    // Mean pool: every output row receives d_pooled / T.
    Vector d_o(k_dim);
    for (std::size_t c = 0; c < k_dim; ++c) d_o[c] = d_pooled[c] / static_cast<double>(T);

    Matrix d_context(T, k_dim, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        add_outer(trace.context.row(i), d_o, grads.wo);
        add_into(d_o, grads.bo.row(0));
        add_mat_vec(wo, d_o, d_context.row(i));
    }

    // context = attention * v
    Matrix d_attention(T, T, 0.0);
    Matrix d_v(T, k_dim, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        const auto dc = d_context.row(i);
        for (std::size_t j = 0; j < T; ++j) {
            d_attention(i, j) = dot(dc, trace.v.row(j));
            const double a = trace.attention(i, j);
            auto dv = d_v.row(j);
            for (std::size_t c = 0; c < k_dim; ++c) dv[c] += a * dc[c];
        }
    }

    // Softmax rows.
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(k_dim));
    Matrix d_scores(T, T);
    for (std::size_t i = 0; i < T; ++i) {
        double row_dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) row_dot += d_attention(i, j) * trace.attention(i, j);
        for (std::size_t j = 0; j < T; ++j) {
            d_scores(i, j) = trace.attention(i, j) * (d_attention(i, j) - row_dot);
        }
    }

    Matrix d_q(T, k_dim, 0.0), d_k(T, k_dim, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        auto dq = d_q.row(i);
        for (std::size_t j = 0; j < T; ++j) {
            const double s = d_scores(i, j) * inv_sqrt;
            if (s == 0.0) continue;
            const auto kr = trace.k.row(j);
            auto dk = d_k.row(j);
            const auto qr = trace.q.row(i);
            for (std::size_t c = 0; c < k_dim; ++c) {
                dq[c] += s * kr[c];
                dk[c] += s * qr[c];
            }
        }
    }

    Matrix d_tokens(T, k_dim, 0.0);
    for (std::size_t i = 0; i < T; ++i) {
        const auto token = trace.tokens.row(i);
        add_outer(token, d_q.row(i), grads.wq);
        add_into(d_q.row(i), grads.bq.row(0));
        add_mat_vec(wq, d_q.row(i), d_tokens.row(i));
        add_outer(token, d_k.row(i), grads.wk);
        add_into(d_k.row(i), grads.bk.row(0));
        add_mat_vec(wk, d_k.row(i), d_tokens.row(i));
        add_outer(token, d_v.row(i), grads.wv);
        add_into(d_v.row(i), grads.bv.row(0));
        add_mat_vec(wv, d_v.row(i), d_tokens.row(i));
    }

    // Token embeddings.
    if (d_values) d_values->assign(features.size(), 0.0);
    std::size_t token = 0;
    std::size_t linear_row = 0;
    std::size_t cat_index = 0;
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (features[j].categorical) {
            const std::size_t code = trace.cat_codes[cat_index];
            add_into(d_tokens.row(token), grads.cat_tables[cat_index].row(code));
            ++cat_index;
            ++token;
        } else {
            for (int which = 0; which < 2; ++which) {
                const double scalar = trace.token_scalars[linear_row];
                const auto dt = d_tokens.row(token);
                auto gw = grads.token_weight.row(linear_row);
                auto gb = grads.token_bias.row(linear_row);
                for (std::size_t c = 0; c < k_dim; ++c) {
                    gw[c] += scalar * dt[c];
                    gb[c] += dt[c];
                }
                if (d_values && which == 0 && trace.token_scalars[linear_row + 1] != 1.0) {
                    // Value-space gradient through standardization; zero when
                    // the feature was missing (indicator token scalar is 1).
                    (*d_values)[j] = dot(token_weight.row(linear_row), dt) / feat_std(0, j);
                }
                ++linear_row;
                ++token;
            }
        }
    }
}

TabularEncoder TabularEncoder::zeros_clone() const {
    TabularEncoder out = *this;
    out.for_each_param([](const std::string&, Partition, Matrix& m) {
        std::fill(m.data.begin(), m.data.end(), 0.0);
    });
    return out;
}

void TabularEncoder::for_each_param(const ParamVisitor& f) {
    f("token_weight", Partition::Embedding, token_weight);
    f("token_bias", Partition::Embedding, token_bias);
    for (std::size_t i = 0; i < cat_tables.size(); ++i) {
        f("cat_table_" + std::to_string(i), Partition::Embedding, cat_tables[i]);
    }
    f("feat_mean", Partition::Stats, feat_mean);
    f("feat_std", Partition::Stats, feat_std);
    f("wq", Partition::Body, wq);
    f("bq", Partition::Body, bq);
    f("wk", Partition::Body, wk);
    f("bk", Partition::Body, bk);
    f("wv", Partition::Body, wv);
    f("bv", Partition::Body, bv);
    f("wo", Partition::Body, wo);
    f("bo", Partition::Body, bo);
    f("wf", Partition::Body, wf);
    f("bf", Partition::Body, bf);
}

void TabularEncoder::for_each_param_const(const ConstParamVisitor& f) const {
    const_cast<TabularEncoder*>(this)->for_each_param(
        [&](const std::string& name, Partition p, Matrix& m) { f(name, p, m); });
}

} // namespace nestcl
