#include "nestcl/model.hpp"

#include <cstring>
#include <type_traits>

#include "nestcl/errors.hpp"

namespace nestcl {

std::vector<FeatureSpec> combined_feature_specs(const Dataset& dataset) {
    std::vector<FeatureSpec> specs = dataset.lesion_features;
    specs.insert(specs.end(), dataset.patient_features.begin(), dataset.patient_features.end());
    return specs;
}

void combined_features(const PatientRecord& patient, const LesionRecord& lesion,
                       Vector& values, std::vector<bool>& missing) {
    values = lesion.lesion_meta;
    values.insert(values.end(), patient.patient_meta.begin(), patient.patient_meta.end());
    missing.assign(lesion.lesion_missing.begin(), lesion.lesion_missing.end());
    missing.insert(missing.end(), patient.patient_missing.begin(), patient.patient_missing.end());
}

Model init_model(const Dataset& dataset, const ModelDims& dims, Architecture arch,
                 std::uint64_t init_seed) {
    if (dataset.patients.empty()) throw EmptyDataset("init_model needs a non-empty dataset");
    Rng rng(init_seed);
    Model model;
    model.arch = arch;
    model.dims = dims;
    model.image = ImageEncoder::create(dataset.image_dim, dims.hidden_dim, dims.embed_dim, rng);

    std::vector<const PatientRecord*> patients;
    for (const auto& p : dataset.patients) patients.push_back(&p);

    if (arch == Architecture::Nested) {
        model.lesion_tab =
            TabularEncoder::create(dataset.lesion_features, dims.token_dim, dims.embed_dim, rng);
        model.lesion_tab.fit_standardization(patients, /*lesion_level=*/true);
        model.patient_tab =
            TabularEncoder::create(dataset.patient_features, dims.token_dim, dims.embed_dim, rng);
        model.patient_tab.fit_standardization(patients, /*lesion_level=*/false);
        model.fusion = FusionParams::create(dims.embed_dim, rng);
    } else {
        model.lesion_tab = TabularEncoder::create(combined_feature_specs(dataset), dims.token_dim,
                                                  dims.embed_dim, rng);
        std::vector<std::pair<const Vector*, const std::vector<bool>*>> rows;
        std::vector<Vector> values(dataset.lesion_count());
        std::vector<std::vector<bool>> missing(dataset.lesion_count());
        std::size_t i = 0;
        for (const auto& p : dataset.patients) {
            for (const auto& les : p.lesions) {
                combined_features(p, les, values[i], missing[i]);
                rows.emplace_back(&values[i], &missing[i]);
                ++i;
            }
        }
        model.lesion_tab.fit_standardization_rows(rows);
    }
    return model;
}

namespace {

template <typename Component, typename Fn>
void visit_component(Component& component, Fn&& fn) {
    if constexpr (std::is_const_v<Component>) {
        component.for_each_param_const(std::forward<Fn>(fn));
    } else {
        component.for_each_param(std::forward<Fn>(fn));
    }
}

template <typename ModelT, typename Fn>
void visit_model(ModelT& model, Fn&& fn) {
    visit_component(model.image, [&](const std::string& name, Partition p, auto& m) {
        fn("image", name, p, m);
    });
    visit_component(model.lesion_tab, [&](const std::string& name, Partition p, auto& m) {
        fn("lesion_tab", name, p, m);
    });
    if (model.arch == Architecture::Nested) {
        visit_component(model.patient_tab, [&](const std::string& name, Partition p, auto& m) {
            fn("patient_tab", name, p, m);
        });
        visit_component(model.fusion, [&](const std::string& name, Partition p, auto& m) {
            fn("fusion", name, p, m);
        });
    }
}

} // namespace

std::vector<SegmentInfo> model_segments(const Model& model) {
    std::vector<SegmentInfo> segments;
    std::size_t offset = 0;
    visit_model(model, [&](const char* component, const std::string& name, Partition p,
                           const Matrix& m) {
        segments.push_back({component, name, p, m.rows, m.cols, offset});
        offset += m.size();
    });
    return segments;
}

std::size_t model_param_count(const Model& model) {
    std::size_t count = 0;
    visit_model(model, [&](const char*, const std::string&, Partition, const Matrix& m) {
        count += m.size();
    });
    return count;
}

std::vector<double> flatten_params(const Model& model) {
    std::vector<double> flat;
    flat.reserve(model_param_count(model));
    visit_model(model, [&](const char*, const std::string&, Partition, const Matrix& m) {
        flat.insert(flat.end(), m.data.begin(), m.data.end());
    });
    return flat;
}

void unflatten_params(Model& model, std::span<const double> flat) {
    std::size_t offset = 0;
    visit_model(model, [&](const char*, const std::string&, Partition, Matrix& m) {
        if (offset + m.size() > flat.size())
            throw ShapeError("unflatten_params: flat vector too short");
        std::memcpy(m.data.data(), flat.data() + offset, m.size() * sizeof(double));
        offset += m.size();
    });
    if (offset != flat.size())
        throw ShapeError("unflatten_params: flat vector length mismatch");
}

std::vector<std::uint8_t> model_trainable_mask(const Model& model, FreezeMode mode) {
    std::vector<std::uint8_t> mask;
    mask.reserve(model_param_count(model));
    visit_model(model, [&](const char*, const std::string&, Partition p, const Matrix& m) {
        mask.insert(mask.end(), m.size(),
                    partition_trainable(p, mode) ? std::uint8_t{1} : std::uint8_t{0});
    });
    return mask;
}

const char* partition_name(Partition p) {
    switch (p) {
        case Partition::Embedding: return "embedding";
        case Partition::Body: return "body";
        case Partition::Stats: return "stats";
        case Partition::Fusion: return "fusion";
    }
    return "?";
}

DatasetEmbeddings embed_dataset(const Model& model, const Dataset& dataset) {
    const std::size_t d = model.dims.embed_dim;
    const std::size_t n = dataset.lesion_count();
    const std::size_t n_patients = dataset.patients.size();

    DatasetEmbeddings out;
    out.image = Matrix(n, d);
    out.lesion_meta = Matrix(n, d);
    if (model.nested()) {
        out.patient_meta = Matrix(n, d);
        out.patient_rows = Matrix(n_patients, d);
        out.fused = Matrix(n_patients, d);
    }
    out.lesion_ids.reserve(n);
    out.labels.reserve(n);

    std::size_t row = 0;
    for (std::size_t p = 0; p < n_patients; ++p) {
        const auto& patient = dataset.patients[p];
        out.patient_ids.push_back(patient.patient_id);

        Vector patient_embedding;
        if (model.nested()) {
            patient_embedding =
                model.patient_tab.forward(patient.patient_meta, patient.patient_missing);
            for (std::size_t c = 0; c < d; ++c) out.patient_rows(p, c) = patient_embedding[c];
        }

        const std::size_t first_row = row;
        for (const auto& lesion : patient.lesions) {
            const Vector w = model.image.forward(to_double(lesion.image));
            Vector h;
            if (model.nested()) {
                h = model.lesion_tab.forward(lesion.lesion_meta, lesion.lesion_missing);
            } else {
                Vector values;
                std::vector<bool> missing;
                combined_features(patient, lesion, values, missing);
                h = model.lesion_tab.forward(values, missing);
            }
            for (std::size_t c = 0; c < d; ++c) {
                out.image(row, c) = w[c];
                out.lesion_meta(row, c) = h[c];
                if (model.nested()) out.patient_meta(row, c) = patient_embedding[c];
            }
            out.lesion_ids.push_back(lesion.lesion_id);
            out.lesion_owner.push_back(p);
            out.labels.push_back(lesion.label);
            out.labeled.push_back(lesion.labeled);
            ++row;
        }

        if (model.nested()) {
            const std::size_t count = patient.lesions.size();
            Matrix w_rows(count, d), h_rows(count, d);
            for (std::size_t l = 0; l < count; ++l) {
                for (std::size_t c = 0; c < d; ++c) {
                    w_rows(l, c) = out.image(first_row + l, c);
                    h_rows(l, c) = out.lesion_meta(first_row + l, c);
                }
            }
            const Vector z = fuse_patient(w_rows, h_rows, model.fusion);
            for (std::size_t c = 0; c < d; ++c) out.fused(p, c) = z[c];
        }
    }
    return out;
}

std::vector<Matrix> collect_attention(const Model& model, const Dataset& dataset,
                                      bool patient_level) {
    if (patient_level && !model.nested())
        throw ConfigError("flat model has no patient encoder");
    std::vector<Matrix> maps;
    TabularTrace trace;
    for (const auto& patient : dataset.patients) {
        if (patient_level) {
            model.patient_tab.forward(patient.patient_meta, patient.patient_missing, &trace);
            maps.push_back(trace.attention);
        } else {
            for (const auto& lesion : patient.lesions) {
                if (model.nested()) {
                    model.lesion_tab.forward(lesion.lesion_meta, lesion.lesion_missing, &trace);
                } else {
                    Vector values;
                    std::vector<bool> missing;
                    combined_features(patient, lesion, values, missing);
                    model.lesion_tab.forward(values, missing, &trace);
                }
                maps.push_back(trace.attention);
            }
        }
    }
    return maps;
}

} // namespace nestcl
