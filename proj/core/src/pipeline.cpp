#include "nestcl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "json_util.hpp"
#include "nestcl/dataset_io.hpp"
#include "nestcl/importance.hpp"
#include "nestcl/errors.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t RunConfig::stage_seed(const std::string& stage_tag) const {
    return seed ^ fnv1a64(stage_tag);
}

void RunConfig::validate() const {
    gen.validate();
    train.validate();
    if (dims.embed_dim < 1 || dims.token_dim < 1 || dims.hidden_dim < 1)
        throw ConfigError("model dims must be >= 1");
    if (!(split_spec.train_fraction > 0.0 && split_spec.train_fraction < 1.0))
        throw ConfigError("split.train_fraction must be in (0,1)");
    if (eval.features.empty()) throw ConfigError("eval.features must select a modality");
    if (!(eval.low_shot_fraction > 0.0 && eval.low_shot_fraction <= 1.0))
        throw ConfigError("eval.low_shot_fraction must be in (0,1]");
    if (eval.knn_k < 1) throw ConfigError("eval.knn_k must be >= 1");
    if (eval.probe.epochs < 1) throw ConfigError("eval.probe_epochs must be >= 1");
    if (!(eval.probe.learning_rate > 0.0)) throw ConfigError("eval.probe_lr must be > 0");
    if (eval.ks.empty()) throw ConfigError("eval.ks must be non-empty");
    if (eval.n_neg < 1) throw ConfigError("eval.n_neg must be >= 1");
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("bad value for '") + key + "'");
        }
    }
}

RunConfig config_from_json(const json& root) {
    detail::require_keys<ConfigError>(
        root, {"seed", "gen", "model", "train", "sampler", "loss", "split", "eval"}, "config");
    RunConfig cfg;
    read_field(root, "seed", cfg.seed);

    if (root.contains("gen")) {
        const auto& g = root.at("gen");
        detail::require_keys<ConfigError>(
            g,
            {"num_patients", "lesions_min", "lesions_max", "image_dim", "patient_meta_dim",
             "lesion_meta_dim", "latent_dim", "malignant_rate", "missing_rate", "noise_scale",
             "planted_feature_boost", "planted_feature_index"},
            "config.gen");
        read_field(g, "num_patients", cfg.gen.num_patients);
        read_field(g, "lesions_min", cfg.gen.lesions_min);
        read_field(g, "lesions_max", cfg.gen.lesions_max);
        read_field(g, "image_dim", cfg.gen.image_dim);
        read_field(g, "patient_meta_dim", cfg.gen.patient_meta_dim);
        read_field(g, "lesion_meta_dim", cfg.gen.lesion_meta_dim);
        read_field(g, "latent_dim", cfg.gen.latent_dim);
        read_field(g, "malignant_rate", cfg.gen.malignant_rate);
        read_field(g, "missing_rate", cfg.gen.missing_rate);
        read_field(g, "noise_scale", cfg.gen.noise_scale);
        read_field(g, "planted_feature_boost", cfg.gen.planted_feature_boost);
        read_field(g, "planted_feature_index", cfg.gen.planted_feature_index);
    }
    if (root.contains("model")) {
        const auto& m = root.at("model");
        detail::require_keys<ConfigError>(m, {"embed_dim", "token_dim", "hidden_dim"},
                                          "config.model");
        read_field(m, "embed_dim", cfg.dims.embed_dim);
        read_field(m, "token_dim", cfg.dims.token_dim);
        read_field(m, "hidden_dim", cfg.dims.hidden_dim);
    }
    if (root.contains("train")) {
        const auto& t = root.at("train");
        detail::require_keys<ConfigError>(
            t,
            {"epochs", "continual_epochs", "learning_rate", "weight_decay", "beta1", "beta2",
             "eps", "architecture"},
            "config.train");
        read_field(t, "epochs", cfg.train.epochs);
        read_field(t, "continual_epochs", cfg.continual_epochs);
        read_field(t, "learning_rate", cfg.train.learning_rate);
        read_field(t, "weight_decay", cfg.train.weight_decay);
        read_field(t, "beta1", cfg.train.beta1);
        read_field(t, "beta2", cfg.train.beta2);
        read_field(t, "eps", cfg.train.eps_opt);
        if (t.contains("architecture")) {
            const auto name = t.at("architecture").get<std::string>();
            if (name == "nested") {
                cfg.train.architecture = Architecture::Nested;
            } else if (name == "flat") {
                cfg.train.architecture = Architecture::Flat;
            } else {
                throw ConfigError("train.architecture must be 'nested' or 'flat'");
            }
        }
    }
    if (root.contains("sampler")) {
        const auto& s = root.at("sampler");
        detail::require_keys<ConfigError>(s, {"batch_patients", "max_lesions", "positive_sampling"},
                                          "config.sampler");
        read_field(s, "batch_patients", cfg.train.sampler.batch_patients);
        read_field(s, "max_lesions", cfg.train.sampler.max_lesions);
        read_field(s, "positive_sampling", cfg.train.sampler.positive_sampling);
    }
    if (root.contains("loss")) {
        const auto& l = root.at("loss");
        detail::require_keys<ConfigError>(l, {"tau", "lambda"}, "config.loss");
        read_field(l, "tau", cfg.train.loss.tau);
        read_field(l, "lambda", cfg.train.loss.lambda);
    }
    if (root.contains("split")) {
        const auto& s = root.at("split");
        detail::require_keys<ConfigError>(s, {"mode", "train_fraction"}, "config.split");
        if (s.contains("mode")) {
            const auto mode = s.at("mode").get<std::string>();
            if (mode == "lesion_level") {
                cfg.split_spec.mode = SplitMode::LesionLevel;
            } else if (mode == "patient_disjoint") {
                cfg.split_spec.mode = SplitMode::PatientDisjoint;
            } else {
                throw ConfigError("split.mode must be 'lesion_level' or 'patient_disjoint'");
            }
        }
        read_field(s, "train_fraction", cfg.split_spec.train_fraction);
    }
    if (root.contains("eval")) {
        const auto& e = root.at("eval");
        detail::require_keys<ConfigError>(
            e, {"features", "knn_k", "low_shot_fraction", "probe_epochs", "probe_lr", "ks",
                "n_neg"},
            "config.eval");
        read_field(e, "features", cfg.eval.features);
        read_field(e, "knn_k", cfg.eval.knn_k);
        read_field(e, "low_shot_fraction", cfg.eval.low_shot_fraction);
        read_field(e, "probe_epochs", cfg.eval.probe.epochs);
        read_field(e, "probe_lr", cfg.eval.probe.learning_rate);
        read_field(e, "ks", cfg.eval.ks);
        read_field(e, "n_neg", cfg.eval.n_neg);
    }
    cfg.validate();
    return cfg;
}

json apply_overrides(json root, const std::vector<std::string>& overrides) {
    for (const auto& entry : overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + entry + "' is not key=value");
        const std::string path = entry.substr(0, eq);
        const std::string raw = entry.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw; // plain string
        }
        json* node = &root;
        std::size_t begin = 0;
        while (true) {
            const auto dotpos = path.find('.', begin);
            const std::string key = path.substr(begin, dotpos - begin);
            if (key.empty()) throw ConfigError("override path '" + path + "' has an empty key");
            if (dotpos == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            begin = dotpos + 1;
        }
    }
    return root;
}

} // namespace

RunConfig run_config_from_json_text(const std::string& text,
                                    const std::vector<std::string>& overrides) {
    json root;
    try {
        root = text.empty() ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");
    return config_from_json(apply_overrides(std::move(root), overrides));
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        try {
            text = read_text(path);
        } catch (const IngestError& e) {
            throw ConfigError(e.what());
        }
    }
    return run_config_from_json_text(text, overrides);
}

// ---------------------------------------------------------------------------
// Stages

void stage_gen(const RunConfig& cfg, const fs::path& out_dir) {
    GenConfig gen = cfg.gen;
    gen.seed = cfg.stage_seed("gen");
    save_dataset(generate(gen), out_dir);
}

void stage_pretrain(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_ckpt) {
    const Dataset dataset = load_dataset(data_dir);
    TrainConfig train_cfg = cfg.train;
    train_cfg.freeze_mode = FreezeMode::All;
    train_cfg.seed = cfg.stage_seed("pretrain");
    train_cfg.sampler.seed = train_cfg.seed;
    const std::uint64_t init_seed = mix_seed(train_cfg.seed, fnv1a64("init"));
    auto [state, history] = pretrain(dataset, cfg.dims, init_seed, train_cfg);
    save_checkpoint(state, out_ckpt);
    write_history_csv(out_ckpt / "history.csv", history);
}

void stage_continual(const RunConfig& cfg, const fs::path& ckpt_dir,
                     const fs::path& target_data_dir, const fs::path& out_ckpt) {
    ModelState state = load_checkpoint(ckpt_dir);
    const Dataset target = load_dataset(target_data_dir);
    TrainConfig train_cfg = cfg.train;
    train_cfg.epochs = cfg.continual_epochs;
    train_cfg.freeze_mode = FreezeMode::EmbeddingOnly;
    train_cfg.seed = cfg.stage_seed("continual");
    train_cfg.sampler.seed = train_cfg.seed;
    const TrainHistory history = continual_pretrain(state, target, train_cfg);
    save_checkpoint(state, out_ckpt);
    write_history_csv(out_ckpt / "history.csv", history);
}

void stage_embed(const fs::path& ckpt_dir, const fs::path& data_dir, const fs::path& out_dir) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);
    const DatasetEmbeddings emb = embed_dataset(state.model, dataset);

    RetrievalPool pool;
    pool.kind = "lesion_image";
    pool.embeddings = emb.image;
    pool.ids = emb.lesion_ids;
    save_pool(pool, out_dir / "image", &emb.lesion_owner);

    pool.kind = "lesion";
    pool.embeddings = emb.lesion_meta;
    save_pool(pool, out_dir / "lesion_meta", &emb.lesion_owner);

    if (state.model.nested()) {
        RetrievalPool patients;
        patients.kind = "patient";
        patients.ids = emb.patient_ids;
        patients.embeddings = emb.patient_rows;
        save_pool(patients, out_dir / "patient_meta");
        patients.kind = "patient_fused";
        patients.embeddings = emb.fused;
        save_pool(patients, out_dir / "fused");
    }
}

void stage_pools(const fs::path& ckpt_dir, const fs::path& reference_dir,
                 const fs::path& out_dir) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset reference = load_dataset(reference_dir);
    save_pools(build_pools(reference, state.model, /*with_associations=*/true), out_dir);
}

FeatureSet build_feature_set(const Model& model, const Dataset& dataset,
                             const std::vector<std::string>& features) {
    bool use_image = false, use_lesion = false, use_patient = false;
    for (const auto& name : features) {
        if (name == "image") {
            use_image = true;
        } else if (name == "lesion_meta") {
            use_lesion = true;
        } else if (name == "patient_meta") {
            use_patient = true;
        } else {
            throw ConfigError("unknown feature '" + name +
                              "' (expected image, lesion_meta, patient_meta)");
        }
    }
    if (!use_image && !use_lesion && !use_patient)
        throw ConfigError("no feature modality selected");
    if (use_patient && !model.nested())
        throw ConfigError("flat checkpoints have no patient_meta features");

    // Only the requested encoders run, so e.g. an image-only probe works on a
    // dataset whose metadata table does not match the checkpoint.
    const std::size_t d = model.dims.embed_dim;
    const std::size_t width =
        d * (static_cast<std::size_t>(use_image) + static_cast<std::size_t>(use_lesion) +
             static_cast<std::size_t>(use_patient));

    FeatureSet set;
    set.num_classes = dataset.num_classes;
    set.features = Matrix(dataset.lesion_count(), width);
    std::size_t row = 0;
    for (const auto& patient : dataset.patients) {
        Vector patient_embedding;
        if (use_patient) {
            patient_embedding =
                model.patient_tab.forward(patient.patient_meta, patient.patient_missing);
        }
        for (const auto& lesion : patient.lesions) {
            std::size_t col = 0;
            if (use_image) {
                const Vector w = model.image.forward(to_double(lesion.image));
                for (std::size_t c = 0; c < d; ++c) set.features(row, col++) = w[c];
            }
            if (use_lesion) {
                Vector h;
                if (model.nested()) {
                    h = model.lesion_tab.forward(lesion.lesion_meta, lesion.lesion_missing);
                } else {
                    Vector values;
                    std::vector<bool> missing;
                    combined_features(patient, lesion, values, missing);
                    h = model.lesion_tab.forward(values, missing);
                }
                for (std::size_t c = 0; c < d; ++c) set.features(row, col++) = h[c];
            }
            if (use_patient) {
                for (std::size_t c = 0; c < d; ++c) set.features(row, col++) = patient_embedding[c];
            }
            set.labels.push_back(lesion.label);
            set.labeled.push_back(lesion.labeled);
            ++row;
        }
    }
    return set;
}

void write_metrics_report(const fs::path& path, const std::string& command,
                          const RunConfig& cfg, const std::vector<std::string>& features,
                          const MetricsReport& metrics, const std::string& ckpt_hash,
                          std::size_t n_train_labeled, std::size_t n_eval) {
    json report;
    report["command"] = command;
    report["features"] = features;
    report["split"] = {
        {"mode", cfg.split_spec.mode == SplitMode::LesionLevel ? "lesion_level"
                                                               : "patient_disjoint"},
        {"train_fraction", cfg.split_spec.train_fraction},
        {"seed", cfg.stage_seed("split")}};
    report["low_shot_fraction"] = cfg.eval.low_shot_fraction;
    report["seed"] = cfg.seed;
    report["checkpoint_hash"] = ckpt_hash;
    report["n_train_labeled"] = n_train_labeled;
    report["n_eval"] = n_eval;
    report["metrics"] = {{"accuracy_pct", metrics.accuracy_pct},
                         {"balanced_accuracy_pct", metrics.balanced_accuracy_pct},
                         {"f1_binary", metrics.f1_binary},
                         {"f1_macro", metrics.f1_macro},
                         {"f1_weighted", metrics.f1_weighted},
                         {"auc", metrics.auc}};
    if (command == "knn") report["k"] = cfg.eval.knn_k;
    write_text_atomic(path, report.dump(2) + "\n");
}

namespace {

struct EvalSplits {
    Dataset train;
    Dataset eval;
};

EvalSplits prepare_splits(const RunConfig& cfg, const Dataset& dataset) {
    SplitSpec spec = cfg.split_spec;
    spec.seed = cfg.stage_seed("split");
    auto [train, eval] = split(dataset, spec);
    if (cfg.eval.low_shot_fraction < 1.0) {
        train = subsample_labels(train, cfg.eval.low_shot_fraction, cfg.stage_seed("lowshot"));
    }
    return {std::move(train), std::move(eval)};
}

std::size_t count_labeled(const FeatureSet& set) {
    std::size_t n = 0;
    for (const bool flag : set.labeled) n += flag ? 1 : 0;
    return n;
}

} // namespace

void stage_probe(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& data_dir,
                 const fs::path& out_report) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);
    const EvalSplits splits = prepare_splits(cfg, dataset);
    const FeatureSet train_set = build_feature_set(state.model, splits.train, cfg.eval.features);
    const FeatureSet eval_set = build_feature_set(state.model, splits.eval, cfg.eval.features);
    const ProbeResult probe = linear_probe(train_set, eval_set, cfg.eval.probe);
    write_metrics_report(out_report, "probe", cfg, cfg.eval.features, probe.metrics,
                         checkpoint_hash(ckpt_dir), count_labeled(train_set), eval_set.size());
}

void stage_knn(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& data_dir,
               const fs::path& out_report) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);
    const EvalSplits splits = prepare_splits(cfg, dataset);
    const FeatureSet train_set = build_feature_set(state.model, splits.train, cfg.eval.features);
    const FeatureSet eval_set = build_feature_set(state.model, splits.eval, cfg.eval.features);
    const KnnResult knn = knn_classify(train_set, eval_set, cfg.eval.knn_k);
    write_metrics_report(out_report, "knn", cfg, cfg.eval.features, knn.metrics,
                         checkpoint_hash(ckpt_dir), count_labeled(train_set), eval_set.size());
}

namespace {

// Image embedding + retrieved pseudo-modalities for every lesion.
FeatureSet retrieved_feature_set(const Model& model, const PoolSet& pools,
                                 const Dataset& dataset, ExtrapolationVariant variant) {
    const std::size_t d = model.dims.embed_dim;
    FeatureSet set;
    set.num_classes = dataset.num_classes;
    set.features = Matrix(dataset.lesion_count(), 3 * d);
    std::size_t row = 0;
    for (const auto& patient : dataset.patients) {
        for (const auto& lesion : patient.lesions) {
            const Vector w = model.image.forward(to_double(lesion.image));
            const Extrapolated ex = extrapolate(w, pools, model.fusion, variant);
            for (std::size_t c = 0; c < d; ++c) {
                set.features(row, c) = w[c];
                set.features(row, d + c) = ex.lesion_meta[c];
                set.features(row, 2 * d + c) = ex.patient_meta[c];
            }
            set.labels.push_back(lesion.label);
            set.labeled.push_back(lesion.labeled);
            ++row;
        }
    }
    return set;
}

} // namespace

void stage_retrieve(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& pools_dir,
                    const fs::path& data_dir, const std::string& variant,
                    const fs::path& out_report) {
    const ModelState state = load_checkpoint(ckpt_dir);
    if (!state.model.nested()) throw ConfigError("retrieve needs a nested checkpoint");
    const PoolSet pools = load_pools(pools_dir);
    const Dataset dataset = load_dataset(data_dir);
    const ExtrapolationVariant var = parse_variant(variant);

    const EvalSplits splits = prepare_splits(cfg, dataset);
    const FeatureSet train_set = retrieved_feature_set(state.model, pools, splits.train, var);
    const FeatureSet eval_set = retrieved_feature_set(state.model, pools, splits.eval, var);
    const ProbeResult probe = linear_probe(train_set, eval_set, cfg.eval.probe);

    const std::vector<std::string> features = {"image", "retrieved_lesion_meta",
                                               "retrieved_patient_meta"};
    write_metrics_report(out_report, "retrieve:" + variant, cfg, features, probe.metrics,
                         checkpoint_hash(ckpt_dir), count_labeled(train_set), eval_set.size());
}

void stage_diagnose(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& data_dir,
                    const fs::path& out_dir) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);
    const DatasetEmbeddings emb = embed_dataset(state.model, dataset);
    Rng rng(cfg.stage_seed("diagnose"));
    const DiagnosticsReport report =
        similarity_diagnostics(emb.image, emb.lesion_meta, rng, cfg.eval.n_neg);

    fs::create_directories(out_dir);
    std::string percentiles = "percentile,matching,non_matching\n";
    for (std::size_t i = 0; i < report.percentiles.levels.size(); ++i) {
        percentiles += std::to_string(report.percentiles.levels[i]) + "," +
                       format_double(report.percentiles.matching[i]) + "," +
                       format_double(report.percentiles.non_matching[i]) + "\n";
    }
    write_text_atomic(out_dir / "percentiles.csv", percentiles);

    std::string histogram = "bin_left,matched_density,retrieved_density\n";
    for (std::size_t b = 0; b < report.histogram.bin_left.size(); ++b) {
        histogram += format_double(report.histogram.bin_left[b]) + "," +
                     format_double(report.histogram.matched_density[b]) + "," +
                     format_double(report.histogram.non_matching_density[b]) + "\n";
    }
    write_text_atomic(out_dir / "histogram.csv", histogram);
}

void stage_rankeval(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& data_dir,
                    const std::string& direction, const fs::path& out_dir) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);

    CrossModalDirection dir;
    if (direction == "img2meta") {
        dir = CrossModalDirection::ImageToMeta;
    } else if (direction == "meta2img") {
        dir = CrossModalDirection::MetaToImage;
    } else {
        throw ConfigError("direction must be 'img2meta' or 'meta2img'");
    }

    const CrossModalReport report = eval_crossmodal(state.model, dataset, dir, cfg.eval.ks);

    fs::create_directories(out_dir);
    json out;
    out["command"] = "rankeval";
    out["direction"] = direction;
    out["checkpoint_hash"] = checkpoint_hash(ckpt_dir);
    out["seed"] = cfg.seed;
    out["ks"] = report.ranking.ks;
    out["recall_at"] = report.ranking.recall_at;
    out["ndcg_at"] = report.ranking.ndcg_at;
    out["map"] = report.ranking.mean_average_precision;
    write_text_atomic(out_dir / "report.json", out.dump(2) + "\n");

    std::string rankings = "query_id,rank_of_truth\n";
    for (std::size_t q = 0; q < report.query_ids.size(); ++q) {
        rankings += report.query_ids[q] + "," +
                    std::to_string(report.ranking.rank_of_truth[q]) + "\n";
    }
    write_text_atomic(out_dir / "rankings.csv", rankings);
}

void stage_importance(const fs::path& ckpt_dir, const fs::path& data_dir,
                      const std::string& encoder, const fs::path& out_csv) {
    const ModelState state = load_checkpoint(ckpt_dir);
    const Dataset dataset = load_dataset(data_dir);
    bool patient_encoder = false;
    if (encoder == "patient") {
        patient_encoder = true;
    } else if (encoder != "lesion") {
        throw ConfigError("encoder must be 'lesion' or 'patient'");
    }
    const ImportanceReport report = dataset_importance(state.model, dataset, patient_encoder);

    std::vector<std::size_t> order(report.importance.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return report.importance[a] > report.importance[b];
    });
    std::string csv = "feature_name,importance\n";
    for (const std::size_t i : order) {
        csv += report.feature_names[i] + "," + format_double(report.importance[i]) + "\n";
    }
    write_text_atomic(out_csv, csv);
}

} // namespace nestcl
