#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nestcl/data.hpp"
#include "nestcl/evaluation.hpp"
#include "nestcl/model.hpp"
#include "nestcl/retrieval.hpp"
#include "nestcl/trainer.hpp"

namespace nestcl {

struct EvalOptions {
    std::vector<std::string> features = {"image", "lesion_meta", "patient_meta"};
    std::size_t knn_k = 20;
    double low_shot_fraction = 1.0;
    ProbeConfig probe;
    std::vector<std::size_t> ks = {1, 5, 10, 100};
    std::size_t n_neg = 10;
};

// One structured configuration document for every stage. Stage sub-seeds are
// derived from the global seed as seed ^ fnv1a64(stage_tag), so stages are
// independently reproducible.
struct RunConfig {
    std::uint64_t seed = 0;
    GenConfig gen;
    ModelDims dims;
    TrainConfig train;                  // pre-training settings
    std::size_t continual_epochs = 100;
    SplitSpec split_spec;
    EvalOptions eval;

    std::uint64_t stage_seed(const std::string& stage_tag) const;
    void validate() const;
};

RunConfig default_run_config();
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);
RunConfig run_config_from_json_text(const std::string& text,
                                    const std::vector<std::string>& overrides);

// Pipeline stages (the CLI subcommands call straight into these).
void stage_gen(const RunConfig& cfg, const std::filesystem::path& out_dir);
void stage_pretrain(const RunConfig& cfg, const std::filesystem::path& data_dir,
                    const std::filesystem::path& out_ckpt);
void stage_continual(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
                     const std::filesystem::path& target_data_dir,
                     const std::filesystem::path& out_ckpt);
void stage_embed(const std::filesystem::path& ckpt_dir, const std::filesystem::path& data_dir,
                 const std::filesystem::path& out_dir);
void stage_pools(const std::filesystem::path& ckpt_dir,
                 const std::filesystem::path& reference_dir,
                 const std::filesystem::path& out_dir);
void stage_probe(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
                 const std::filesystem::path& data_dir,
                 const std::filesystem::path& out_report);
void stage_knn(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
               const std::filesystem::path& data_dir, const std::filesystem::path& out_report);
void stage_retrieve(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
                    const std::filesystem::path& pools_dir,
                    const std::filesystem::path& data_dir, const std::string& variant,
                    const std::filesystem::path& out_report);
void stage_diagnose(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
                    const std::filesystem::path& data_dir,
                    const std::filesystem::path& out_dir);
void stage_rankeval(const RunConfig& cfg, const std::filesystem::path& ckpt_dir,
                    const std::filesystem::path& data_dir, const std::string& direction,
                    const std::filesystem::path& out_dir);
void stage_importance(const std::filesystem::path& ckpt_dir,
                      const std::filesystem::path& data_dir, const std::string& encoder,
                      const std::filesystem::path& out_csv);

// Feature selection shared by probe/knn/retrieve. Valid names: image,
// lesion_meta, patient_meta (nested checkpoints only for the last).
FeatureSet build_feature_set(const Model& model, const Dataset& dataset,
                             const std::vector<std::string>& features);

void write_metrics_report(const std::filesystem::path& path, const std::string& command,
                          const RunConfig& cfg, const std::vector<std::string>& features,
                          const MetricsReport& metrics, const std::string& ckpt_hash,
                          std::size_t n_train_labeled, std::size_t n_eval);

} // namespace nestcl
