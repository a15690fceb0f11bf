#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "nestcl/dataset_io.hpp"
#include "nestcl/errors.hpp"
#include "nestcl/trainer.hpp"

using namespace nestcl;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(std::uint64_t seed, std::size_t patients = 8) {
    GenConfig cfg;
    cfg.num_patients = patients;
    cfg.lesions_min = 3;
    cfg.lesions_max = 5;
    cfg.image_dim = 10;
    cfg.patient_meta_dim = 4;
    cfg.lesion_meta_dim = 4;
    cfg.latent_dim = 3;
    cfg.seed = seed;
    return generate(cfg);
}

TrainConfig tiny_train(std::size_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = 1e-3;
    cfg.sampler.batch_patients = 3;
    cfg.seed = 77;
    cfg.sampler.seed = 77;
    return cfg;
}

ModelDims tiny_dims() { return {8, 6, 12}; }

std::vector<char> file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("adamw hand-checked updates") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;

    SUBCASE("zero gradient, zero decay: parameters unchanged") {
        std::vector<double> p{1.5}, g{0.0}, m1{0.0}, m2{0.0};
        std::vector<std::uint8_t> mask{1};
        adamw_step(p, g, m1, m2, 1, mask, cfg);
        CHECK(p[0] == 1.5);
    }
    SUBCASE("first step moves by lr under constant unit gradient") {
        std::vector<double> p{0.0}, g{1.0}, m1{0.0}, m2{0.0};
        std::vector<std::uint8_t> mask{1};
        adamw_step(p, g, m1, m2, 1, mask, cfg);
        CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
    }
    SUBCASE("pure decay shrinks by (1 - lr*wd) per step") {
        cfg.weight_decay = 0.1;
        std::vector<double> p{2.0}, g{0.0}, m1{0.0}, m2{0.0};
        std::vector<std::uint8_t> mask{1};
        adamw_step(p, g, m1, m2, 1, mask, cfg);
        CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.1)).epsilon(1e-12));
        adamw_step(p, g, m1, m2, 2, mask, cfg);
        CHECK(p[0] == doctest::Approx(2.0 * std::pow(1.0 - 0.1 * 0.1, 2)).epsilon(1e-12));
    }
    SUBCASE("masked entries are untouched, moments included") {
        std::vector<double> p{1.0, 1.0}, g{1.0, 1.0}, m1{0.0, 0.0}, m2{0.0, 0.0};
        std::vector<std::uint8_t> mask{1, 0};
        adamw_step(p, g, m1, m2, 1, mask, cfg);
        CHECK(p[1] == 1.0);
        CHECK(m1[1] == 0.0);
        CHECK(m2[1] == 0.0);
        CHECK(p[0] != 1.0);
    }
    SUBCASE("length mismatch is rejected") {
        std::vector<double> p{1.0}, g{1.0, 2.0}, m1{0.0}, m2{0.0};
        std::vector<std::uint8_t> mask{1};
        CHECK_THROWS_AS(adamw_step(p, g, m1, m2, 1, mask, cfg), ShapeError);
    }
}

TEST_CASE("pretrain rejects zero epochs and is deterministic") {
    const Dataset ds = tiny_dataset(5);
    TrainConfig cfg = tiny_train(0);
    CHECK_THROWS_AS(pretrain(ds, tiny_dims(), 1, cfg), ConfigError);

    cfg = tiny_train(2);
    auto [state_a, hist_a] = pretrain(ds, tiny_dims(), 9, cfg);
    auto [state_b, hist_b] = pretrain(ds, tiny_dims(), 9, cfg);
    CHECK(flatten_params(state_a.model) == flatten_params(state_b.model));
    CHECK(state_a.m1 == state_b.m1);
    CHECK(state_a.m2 == state_b.m2);
    REQUIRE(hist_a.size() == 2);
    for (std::size_t e = 0; e < hist_a.size(); ++e) {
        CHECK(hist_a[e].total == hist_b[e].total);
        CHECK(std::isfinite(hist_a[e].total));
    }
}

TEST_CASE("training reduces the loss on the tiny dataset") {
    const Dataset ds = tiny_dataset(6, 12);
    TrainConfig cfg = tiny_train(30);
    auto [state, hist] = pretrain(ds, tiny_dims(), 3, cfg);
    CHECK(hist.back().total < hist.front().total);
}

TEST_CASE("flat architecture trains end to end") {
    const Dataset ds = tiny_dataset(7);
    TrainConfig cfg = tiny_train(2);
    cfg.architecture = Architecture::Flat;
    auto [state, hist] = pretrain(ds, tiny_dims(), 4, cfg);
    CHECK_FALSE(state.model.nested());
    CHECK(std::isfinite(hist.back().total));
    CHECK(hist.back().outer == 0.0);
}

TEST_CASE("embedding-only freezing keeps body parameters bit-identical") {
    const Dataset ds = tiny_dataset(8);
    TrainConfig cfg = tiny_train(1);
    auto [state, hist] = pretrain(ds, tiny_dims(), 5, cfg);

    const auto before = flatten_params(state.model);
    TrainConfig frozen = tiny_train(3);
    frozen.freeze_mode = FreezeMode::EmbeddingOnly;
    train(state, ds, frozen);
    const auto after = flatten_params(state.model);
    const auto segments = model_segments(state.model);

    bool embedding_changed = false;
    for (const auto& seg : segments) {
        const std::size_t begin = seg.offset;
        const std::size_t end = seg.offset + seg.rows * seg.cols;
        if (seg.partition == Partition::Body || seg.partition == Partition::Stats) {
            for (std::size_t i = begin; i < end; ++i) CHECK(before[i] == after[i]);
        } else {
            for (std::size_t i = begin; i < end; ++i) {
                embedding_changed = embedding_changed || before[i] != after[i];
            }
        }
    }
    CHECK(embedding_changed);
}

TEST_CASE("checkpoint round trip is lossless, including moments and step") {
    const Dataset ds = tiny_dataset(9);
    TrainConfig cfg = tiny_train(1);
    auto [state, hist] = pretrain(ds, tiny_dims(), 6, cfg);

    const fs::path dir = fs::temp_directory_path() / "nestcl_test_ckpt";
    fs::remove_all(dir);
    save_checkpoint(state, dir);
    const ModelState loaded = load_checkpoint(dir);
    CHECK(loaded.step == state.step);

    // Values were quantized to f32 on save; a second save must be identical.
    const fs::path dir2 = fs::temp_directory_path() / "nestcl_test_ckpt2";
    fs::remove_all(dir2);
    save_checkpoint(loaded, dir2);
    CHECK(file_bytes(dir / "params.f32") == file_bytes(dir2 / "params.f32"));
    CHECK(file_bytes(dir / "moments.f32") == file_bytes(dir2 / "moments.f32"));
    CHECK(file_bytes(dir / "manifest.json") == file_bytes(dir2 / "manifest.json"));

    SUBCASE("corrupted manifest byte") {
        auto text = read_text(dir / "manifest.json");
        text[0] = '[';
        write_text_atomic(dir / "manifest.json", text);
        CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
    }
    SUBCASE("truncated params file") {
        const auto params = read_f32(dir / "params.f32");
        write_f32_atomic(dir / "params.f32", {params.begin(), params.end() - 1});
        CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("continual pre-training reuses bodies across new feature widths") {
    const Dataset source = tiny_dataset(10);
    TrainConfig cfg = tiny_train(2);
    auto [state, hist] = pretrain(source, tiny_dims(), 7, cfg);

    GenConfig target_cfg;
    target_cfg.num_patients = 6;
    target_cfg.lesions_min = 3;
    target_cfg.lesions_max = 4;
    target_cfg.image_dim = 14;      // both input widths change
    target_cfg.patient_meta_dim = 3;
    target_cfg.lesion_meta_dim = 6;
    target_cfg.latent_dim = 3;
    target_cfg.seed = 55;
    const Dataset target = generate(target_cfg);

    const ModelState before = state;

    TrainConfig continual = tiny_train(2);
    continual.freeze_mode = FreezeMode::EmbeddingOnly;

    SUBCASE("zero epochs leaves the state untouched") {
        TrainConfig zero = continual;
        zero.epochs = 0;
        const auto history = continual_pretrain(state, target, zero);
        CHECK(history.empty());
        CHECK(flatten_params(state.model) == flatten_params(before.model));
    }

    SUBCASE("bodies and fusion are carried over; embeddings fit the target") {
        const auto history = continual_pretrain(state, target, continual);
        CHECK(history.size() == 2);
        CHECK(state.model.image.input_dim == 14);
        CHECK(state.model.lesion_tab.features.size() == 6);
        CHECK(state.model.patient_tab.features.size() == 3);

        auto body_of = [](const Model& m) {
            std::vector<double> values;
            const auto flat = flatten_params(m);
            for (const auto& seg : model_segments(m)) {
                if (seg.partition != Partition::Body) continue;
                for (std::size_t i = seg.offset; i < seg.offset + seg.rows * seg.cols; ++i) {
                    values.push_back(flat[i]);
                }
            }
            return values;
        };
        CHECK(body_of(state.model) == body_of(before.model));

        // The shifted target is usable end to end.
        const auto emb = embed_dataset(state.model, target);
        CHECK(emb.image.rows == target.lesion_count());
    }
}

TEST_CASE("training history lands in the csv") {
    const fs::path path = fs::temp_directory_path() / "nestcl_history.csv";
    write_history_csv(path, {{0, 1.5, 0.5, 1.4}, {1, 1.2, 0.4, 1.1}});
    const auto text = read_text(path);
    CHECK(text.rfind("epoch,loss_inner,loss_outer,loss_total\n", 0) == 0);
    CHECK(text.find("\n1,1.2") != std::string::npos);
    fs::remove(path);
}
