#include "nestcl/trainer.hpp"

#include <cmath>
#include <string>

#include "nestcl/dataset_io.hpp"
#include "nestcl/errors.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("betas must be in [0,1)");
    if (!(eps_opt > 0.0)) throw ConfigError("eps_opt must be > 0");
    sampler.validate();
    loss.validate();
}

OptimizerConfig TrainConfig::optimizer() const {
    return {learning_rate, weight_decay, beta1, beta2, eps_opt};
}

namespace {

struct BatchStats {
    double inner = 0.0;
    double outer = 0.0;
    double total = 0.0;
};

// One nested forward/backward/step over a sampled batch.
BatchStats nested_step(ModelState& state, const Dataset& dataset, const Batch& batch,
                       const TrainConfig& cfg, const std::vector<std::uint8_t>& mask) {
    Model& model = state.model;
    const std::size_t d = model.dims.embed_dim;
    const std::size_t b = batch.size();

    std::vector<PatientTensors> tensors(b);
    std::vector<std::vector<ImageTrace>> image_traces(b);
    std::vector<std::vector<TabularTrace>> lesion_traces(b);
    std::vector<TabularTrace> patient_traces(b);
    Matrix x_rows(b, d);

    for (std::size_t p = 0; p < b; ++p) {
        const auto& selection = batch[p];
        const auto& patient = dataset.patients[selection.patient];
        const std::size_t n = selection.lesions.size();
        tensors[p].w = Matrix(n, d);
        tensors[p].h = Matrix(n, d);
        image_traces[p].resize(n);
        lesion_traces[p].resize(n);
        for (std::size_t l = 0; l < n; ++l) {
            const auto& lesion = patient.lesions[selection.lesions[l]];
            const Vector w =
                model.image.forward(to_double(lesion.image), &image_traces[p][l]);
            const Vector h = model.lesion_tab.forward(lesion.lesion_meta, lesion.lesion_missing,
                                                      &lesion_traces[p][l]);
            for (std::size_t c = 0; c < d; ++c) {
                tensors[p].w(l, c) = w[c];
                tensors[p].h(l, c) = h[c];
            }
        }
        const Vector x =
            model.patient_tab.forward(patient.patient_meta, patient.patient_missing,
                                      &patient_traces[p]);
        for (std::size_t c = 0; c < d; ++c) x_rows(p, c) = x[c];
    }

    const TotalLossResult res = total_loss(tensors, x_rows, cfg.loss, model.fusion);

    Model grads = model;
    auto zero = [](auto& component) {
        component.for_each_param(
            [](const std::string&, Partition, Matrix& m) { m.data.assign(m.size(), 0.0); });
    };
    zero(grads.image);
    zero(grads.lesion_tab);
    zero(grads.patient_tab);
    grads.fusion = res.d_fusion;

    for (std::size_t p = 0; p < b; ++p) {
        const std::size_t n = batch[p].lesions.size();
        for (std::size_t l = 0; l < n; ++l) {
            model.image.backward(image_traces[p][l], res.d_w[p].row(l), grads.image);
            model.lesion_tab.backward(lesion_traces[p][l], res.d_h[p].row(l), grads.lesion_tab);
        }
        model.patient_tab.backward(patient_traces[p], res.d_x.row(p), grads.patient_tab);
    }

    auto flat_params = flatten_params(model);
    const auto flat_grads = flatten_params(grads);
    ++state.step;
    adamw_step(flat_params, flat_grads, state.m1, state.m2, state.step, mask, cfg.optimizer());
    unflatten_params(model, flat_params);

    return {res.inner, res.outer, res.total};
}

// Flat variant: one InfoNCE across every lesion of the batch, encoders only.
BatchStats flat_step(ModelState& state, const Dataset& dataset, const Batch& batch,
                     const TrainConfig& cfg, const std::vector<std::uint8_t>& mask) {
    Model& model = state.model;
    const std::size_t d = model.dims.embed_dim;

    std::size_t total_lesions = 0;
    for (const auto& sel : batch) total_lesions += sel.lesions.size();

    Matrix w_rows(total_lesions, d), g_rows(total_lesions, d);
    std::vector<ImageTrace> image_traces(total_lesions);
    std::vector<TabularTrace> meta_traces(total_lesions);

    std::size_t row = 0;
    for (const auto& selection : batch) {
        const auto& patient = dataset.patients[selection.patient];
        for (const std::size_t l : selection.lesions) {
            const auto& lesion = patient.lesions[l];
            const Vector w = model.image.forward(to_double(lesion.image), &image_traces[row]);
            Vector values;
            std::vector<bool> missing;
            combined_features(patient, lesion, values, missing);
            const Vector g = model.lesion_tab.forward(values, missing, &meta_traces[row]);
            for (std::size_t c = 0; c < d; ++c) {
                w_rows(row, c) = w[c];
                g_rows(row, c) = g[c];
            }
            ++row;
        }
    }

    const InfoNceResult res = flat_loss(w_rows, g_rows, cfg.loss.tau);

    Model grads = model;
    auto zero = [](auto& component) {
        component.for_each_param(
            [](const std::string&, Partition, Matrix& m) { m.data.assign(m.size(), 0.0); });
    };
    zero(grads.image);
    zero(grads.lesion_tab);

    for (std::size_t i = 0; i < total_lesions; ++i) {
        model.image.backward(image_traces[i], res.d_w.row(i), grads.image);
        model.lesion_tab.backward(meta_traces[i], res.d_h.row(i), grads.lesion_tab);
    }

    auto flat_params = flatten_params(model);
    const auto flat_grads = flatten_params(grads);
    ++state.step;
    adamw_step(flat_params, flat_grads, state.m1, state.m2, state.step, mask, cfg.optimizer());
    unflatten_params(model, flat_params);

    return {res.loss, 0.0, res.loss};
}

TrainHistory run_epochs(ModelState& state, const Dataset& dataset, const TrainConfig& cfg) {
    if (dataset.patients.empty()) throw EmptyDataset("training needs a non-empty dataset");
    const auto mask = model_trainable_mask(state.model, cfg.freeze_mode);
    if (state.m1.size() != mask.size() || state.m2.size() != mask.size())
        throw ShapeError("optimizer moments do not match parameter count");

    TrainHistory history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = sample_epoch(dataset, cfg.sampler, epoch);
        EpochStats stats{epoch, 0.0, 0.0, 0.0};
        std::size_t batch_index = 0;
        for (const auto& batch : batches) {
            const BatchStats bs = state.model.nested()
                                      ? nested_step(state, dataset, batch, cfg, mask)
                                      : flat_step(state, dataset, batch, cfg, mask);
            if (!std::isfinite(bs.total)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_index));
            }
            stats.inner += bs.inner;
            stats.outer += bs.outer;
            stats.total += bs.total;
            ++batch_index;
        }
        const auto nb = static_cast<double>(batches.size());
        stats.inner /= nb;
        stats.outer /= nb;
        stats.total /= nb;
        history.push_back(stats);
    }
    return history;
}

} // namespace

std::pair<ModelState, TrainHistory> pretrain(const Dataset& dataset, const ModelDims& dims,
                                             std::uint64_t init_seed, const TrainConfig& cfg) {
    cfg.validate();
    ModelState state;
    state.model = init_model(dataset, dims, cfg.architecture, init_seed);
    state.reset_moments();
    TrainHistory history = run_epochs(state, dataset, cfg);
    return {std::move(state), std::move(history)};
}

TrainHistory train(ModelState& state, const Dataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    return run_epochs(state, dataset, cfg);
}

TrainHistory continual_pretrain(ModelState& state, const Dataset& target,
                                const TrainConfig& cfg) {
    if (cfg.epochs == 0) return {};
    cfg.validate();
    if (target.patients.empty()) throw EmptyDataset("continual target is empty");

    Model& model = state.model;
    Rng rng(mix_seed(cfg.seed, fnv1a64("embedding_reinit")));

    // Fresh embedding layers sized for the target's inputs; bodies and fusion
    // are carried over.
    {
        ImageEncoder fresh = ImageEncoder::create(target.image_dim, model.dims.hidden_dim,
                                                  model.dims.embed_dim, rng);
        model.image.input_dim = target.image_dim;
        model.image.w1 = std::move(fresh.w1);
        model.image.b1 = std::move(fresh.b1);
    }
    std::vector<const PatientRecord*> patients;
    for (const auto& p : target.patients) patients.push_back(&p);

    auto reinit_tabular = [&](TabularEncoder& enc, const std::vector<FeatureSpec>& features) {
        TabularEncoder fresh =
            TabularEncoder::create(features, model.dims.token_dim, model.dims.embed_dim, rng);
        enc.features = features;
        enc.token_weight = std::move(fresh.token_weight);
        enc.token_bias = std::move(fresh.token_bias);
        enc.cat_tables = std::move(fresh.cat_tables);
        enc.feat_mean = std::move(fresh.feat_mean);
        enc.feat_std = std::move(fresh.feat_std);
    };

    if (model.nested()) {
        reinit_tabular(model.lesion_tab, target.lesion_features);
        model.lesion_tab.fit_standardization(patients, /*lesion_level=*/true);
        reinit_tabular(model.patient_tab, target.patient_features);
        model.patient_tab.fit_standardization(patients, /*lesion_level=*/false);
    } else {
        reinit_tabular(model.lesion_tab, combined_feature_specs(target));
        std::vector<Vector> values(target.lesion_count());
        std::vector<std::vector<bool>> missing(target.lesion_count());
        std::vector<std::pair<const Vector*, const std::vector<bool>*>> rows;
        std::size_t i = 0;
        for (const auto& p : target.patients) {
            for (const auto& les : p.lesions) {
                combined_features(p, les, values[i], missing[i]);
                rows.emplace_back(&values[i], &missing[i]);
                ++i;
            }
        }
        model.lesion_tab.fit_standardization_rows(rows);
    }

    state.reset_moments();
    return run_epochs(state, target, cfg);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    std::string csv = "epoch,loss_inner,loss_outer,loss_total\n";
    for (const auto& row : history) {
        csv += std::to_string(row.epoch) + "," + format_double(row.inner) + "," +
               format_double(row.outer) + "," + format_double(row.total) + "\n";
    }
    write_text_atomic(path, csv);
}

} // namespace nestcl
