// nestcl: nested multi-modal contrastive pre-training on hierarchical
// patient/lesion data, with continual adaptation, retrieval-based metadata
// extrapolation and a downstream evaluation harness.
//
// Every stage reads/writes plain files (CSV, JSON, raw f32) and is a pure
// function of its inputs and the global --seed: per-stage sub-seeds are
// derived as seed XOR fnv1a64(stage tag), so any stage can be reproduced in
// isolation.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nestcl/errors.hpp"
#include "nestcl/parallel.hpp"
#include "nestcl/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitDivergence = 4;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "JSON configuration file");
    cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set train.epochs=50");
    cmd->add_option("--seed", opts.seed, "Global seed (overrides the config file)")
        ->each([&](const std::string&) { opts.seed_given = true; });
    cmd->add_option("--threads", opts.threads, "Worker cap for parallel sections")
        ->check(CLI::PositiveNumber);
}

nestcl::RunConfig resolve_config(const CommonOptions& opts) {
    nestcl::RunConfig cfg = nestcl::load_run_config(opts.config_path, opts.overrides);
    if (opts.seed_given) cfg.seed = opts.seed;
    nestcl::set_max_threads(opts.threads);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nested contrastive pre-training pipeline"};
    app.require_subcommand(1);

    CommonOptions opts;

    std::string data_dir, out_path, ckpt_dir, pools_dir;
    std::string variant = "I2L2P";
    std::string direction = "img2meta";
    std::string encoder = "lesion";

    auto* gen = app.add_subcommand("gen", "Generate and save a synthetic dataset");
    add_common(gen, opts);
    gen->add_option("--out", out_path, "Output dataset directory")->required();

    auto* pretrain = app.add_subcommand("pretrain", "Nested contrastive pre-training");
    add_common(pretrain, opts);
    pretrain->add_option("--data", data_dir, "Dataset directory")->required();
    pretrain->add_option("--out", out_path, "Output checkpoint directory")->required();

    auto* continual = app.add_subcommand(
        "continual", "Continual pre-training (embedding layers only) on a target dataset");
    add_common(continual, opts);
    continual->add_option("--ckpt", ckpt_dir, "Source checkpoint")->required();
    continual->add_option("--data", data_dir, "Target dataset directory")->required();
    continual->add_option("--out", out_path, "Output checkpoint directory")->required();

    auto* embed = app.add_subcommand("embed", "Emit per-lesion and per-patient embeddings");
    add_common(embed, opts);
    embed->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    embed->add_option("--data", data_dir, "Dataset directory")->required();
    embed->add_option("--out", out_path, "Output directory")->required();

    auto* pools = app.add_subcommand("pools", "Build retrieval pools from a reference dataset");
    add_common(pools, opts);
    pools->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    pools->add_option("--reference", data_dir, "Reference dataset directory")->required();
    pools->add_option("--out", out_path, "Output pools directory")->required();

    std::string features_csv;
    double low_shot = -1.0;
    std::size_t knn_k = 0;

    auto* probe = app.add_subcommand("probe", "Linear probing on frozen features");
    add_common(probe, opts);
    probe->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    probe->add_option("--data", data_dir, "Dataset directory")->required();
    probe->add_option("--out", out_path, "Output report.json")->required();
    probe->add_option("--features", features_csv,
                      "Comma-separated modalities: image,lesion_meta,patient_meta");
    probe->add_option("--low-shot", low_shot, "Fraction of train labels kept, in (0,1]");

    auto* knn = app.add_subcommand("knn", "kNN classification on frozen features");
    add_common(knn, opts);
    knn->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    knn->add_option("--data", data_dir, "Dataset directory")->required();
    knn->add_option("--out", out_path, "Output report.json")->required();
    knn->add_option("--features", features_csv,
                    "Comma-separated modalities: image,lesion_meta,patient_meta");
    knn->add_option("--low-shot", low_shot, "Fraction of train labels kept, in (0,1]");
    knn->add_option("--k", knn_k, "Neighbor count");

    auto* retrieve = app.add_subcommand(
        "retrieve", "Metadata extrapolation from pools, then linear probing");
    add_common(retrieve, opts);
    retrieve->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    retrieve->add_option("--pools", pools_dir, "Pools directory")->required();
    retrieve->add_option("--data", data_dir, "Target dataset directory")->required();
    retrieve->add_option("--variant", variant, "I2I, I2L or I2L2P");
    retrieve->add_option("--out", out_path, "Output report.json")->required();

    auto* diagnose = app.add_subcommand("diagnose", "Embedding-space similarity diagnostics");
    add_common(diagnose, opts);
    diagnose->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    diagnose->add_option("--data", data_dir, "Dataset directory")->required();
    diagnose->add_option("--out", out_path, "Output directory")->required();

    std::vector<std::size_t> rank_ks;
    auto* rankeval = app.add_subcommand("rankeval", "Cross-modal retrieval ranking metrics");
    add_common(rankeval, opts);
    rankeval->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    rankeval->add_option("--data", data_dir, "Dataset directory")->required();
    rankeval->add_option("--direction", direction, "img2meta or meta2img");
    rankeval->add_option("--ks", rank_ks, "Ranks to report, e.g. --ks 1 5 10 100");
    rankeval->add_option("--out", out_path, "Output directory")->required();

    auto* importance = app.add_subcommand("importance", "Attention-derived feature importance");
    add_common(importance, opts);
    importance->add_option("--ckpt", ckpt_dir, "Checkpoint")->required();
    importance->add_option("--data", data_dir, "Dataset directory")->required();
    importance->add_option("--encoder", encoder, "lesion or patient");
    importance->add_option("--out", out_path, "Output importance.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::fprintf(stderr, "error: ConfigError: %s\n", e.what());
        return kExitValidation;
    }

    try {
        if (gen->parsed()) {
            nestcl::stage_gen(resolve_config(opts), out_path);
        } else if (pretrain->parsed()) {
            nestcl::stage_pretrain(resolve_config(opts), data_dir, out_path);
        } else if (continual->parsed()) {
            nestcl::stage_continual(resolve_config(opts), ckpt_dir, data_dir, out_path);
        } else if (embed->parsed()) {
            resolve_config(opts);
            nestcl::stage_embed(ckpt_dir, data_dir, out_path);
        } else if (pools->parsed()) {
            resolve_config(opts);
            nestcl::stage_pools(ckpt_dir, data_dir, out_path);
        } else if (probe->parsed() || knn->parsed()) {
            nestcl::RunConfig cfg = resolve_config(opts);
            if (probe->count("--features") || knn->count("--features")) {
                cfg.eval.features.clear();
                std::string token;
                for (const char c : features_csv + ",") {
                    if (c == ',') {
                        if (!token.empty()) cfg.eval.features.push_back(token);
                        token.clear();
                    } else {
                        token.push_back(c);
                    }
                }
            }
            if (low_shot >= 0.0) {
                if (!(low_shot > 0.0 && low_shot <= 1.0))
                    throw nestcl::ConfigError("--low-shot must be in (0,1]");
                cfg.eval.low_shot_fraction = low_shot;
            }
            if (knn_k > 0) cfg.eval.knn_k = knn_k;
            if (probe->parsed()) {
                nestcl::stage_probe(cfg, ckpt_dir, data_dir, out_path);
            } else {
                nestcl::stage_knn(cfg, ckpt_dir, data_dir, out_path);
            }
        } else if (retrieve->parsed()) {
            nestcl::stage_retrieve(resolve_config(opts), ckpt_dir, pools_dir, data_dir, variant,
                           out_path);
        } else if (diagnose->parsed()) {
            nestcl::stage_diagnose(resolve_config(opts), ckpt_dir, data_dir, out_path);
        } else if (rankeval->parsed()) {
            nestcl::RunConfig cfg = resolve_config(opts);
            if (!rank_ks.empty()) cfg.eval.ks = rank_ks;
            nestcl::stage_rankeval(cfg, ckpt_dir, data_dir, direction, out_path);
        } else if (importance->parsed()) {
            resolve_config(opts);
            nestcl::stage_importance(ckpt_dir, data_dir, encoder, out_path);
        }
    } catch (const nestcl::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const nestcl::DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDivergence;
    } catch (const nestcl::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: RuntimeError: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
