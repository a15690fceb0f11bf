// End-to-end checks against the real executable.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "nestcl/dataset_io.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = NESTCL_CLI_PATH;

int run(const std::string& args) {
    const std::string command = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "nestcl_cli_test";
    return dir;
}

std::string slurp(const fs::path& p) { return nestcl::read_text(p); }

const std::string kSmallGen =
    " --set gen.num_patients=12 --set gen.image_dim=12 --set gen.latent_dim=3"
    " --set gen.patient_meta_dim=4 --set gen.lesion_meta_dim=4";

} // namespace

TEST_CASE("cli pipeline: gen twice is byte-identical, stages chain, bad flags exit 2") {
    const fs::path dir = work_dir();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();

    REQUIRE(run("gen --seed 5" + kSmallGen + " --out " + d + "/data_a") == 0);
    REQUIRE(run("gen --seed 5" + kSmallGen + " --out " + d + "/data_b") == 0);
    for (const char* name : {"manifest.json", "patients.csv", "lesions.csv", "images.f32"}) {
        CHECK(slurp(dir / "data_a" / name) == slurp(dir / "data_b" / name));
    }

    REQUIRE(run("pretrain --seed 5 --set train.epochs=2" + kSmallGen + " --data " + d +
                "/data_a --out " + d + "/ckpt") == 0);
    CHECK(fs::exists(dir / "ckpt" / "params.f32"));
    CHECK(fs::exists(dir / "ckpt" / "history.csv"));

    SUBCASE("probe emits a report and does not mutate the checkpoint") {
        const auto params_before = slurp(dir / "ckpt" / "params.f32");
        REQUIRE(run("probe --seed 5 --ckpt " + d + "/ckpt --data " + d + "/data_a --out " + d +
                    "/report.json") == 0);
        const auto report = slurp(dir / "report.json");
        CHECK(report.find("\"balanced_accuracy_pct\"") != std::string::npos);
        CHECK(slurp(dir / "ckpt" / "params.f32") == params_before);

        // Idempotence: identical inputs give identical bytes.
        REQUIRE(run("probe --seed 5 --ckpt " + d + "/ckpt --data " + d + "/data_a --out " + d +
                    "/report2.json") == 0);
        CHECK(slurp(dir / "report2.json") == report);
    }

    SUBCASE("no modality selected is a validation error") {
        CHECK(run("probe --seed 5 --ckpt " + d + "/ckpt --data " + d +
                  "/data_a --features '' --out " + d + "/x.json") == 2);
    }

    SUBCASE("unknown config key is a validation error") {
        CHECK(run("gen --seed 5 --set bogus.key=1 --out " + d + "/never") == 2);
    }

    SUBCASE("missing input directory is a runtime error") {
        CHECK(run("probe --seed 5 --ckpt " + d + "/missing --data " + d + "/data_a --out " + d +
                  "/x.json") == 3);
    }

    SUBCASE("remaining stages produce their artifacts") {
        REQUIRE(run("pools --seed 5 --ckpt " + d + "/ckpt --reference " + d +
                    "/data_a --out " + d + "/pools") == 0);
        CHECK(fs::exists(dir / "pools" / "lesion_meta" / "pool.f32"));
        CHECK(fs::exists(dir / "pools" / "patient_meta" / "manifest.json"));

        REQUIRE(run("retrieve --seed 5 --ckpt " + d + "/ckpt --pools " + d + "/pools --data " +
                    d + "/data_a --variant I2L2P --out " + d + "/ret.json") == 0);
        CHECK(slurp(dir / "ret.json").find("retrieve:I2L2P") != std::string::npos);

        REQUIRE(run("knn --seed 5 --k 3 --ckpt " + d + "/ckpt --data " + d + "/data_a --out " +
                    d + "/knn.json") == 0);
        CHECK(slurp(dir / "knn.json").find("\"command\": \"knn\"") != std::string::npos);

        REQUIRE(run("diagnose --seed 5 --ckpt " + d + "/ckpt --data " + d + "/data_a --out " +
                    d + "/diag") == 0);
        CHECK(slurp(dir / "diag" / "percentiles.csv")
                  .rfind("percentile,matching,non_matching", 0) == 0);
        CHECK(slurp(dir / "diag" / "histogram.csv")
                  .rfind("bin_left,matched_density,retrieved_density", 0) == 0);

        REQUIRE(run("rankeval --seed 5 --ckpt " + d + "/ckpt --data " + d +
                    "/data_a --direction img2meta --ks 1 --out " + d + "/rank") == 0);
        CHECK(slurp(dir / "rank" / "rankings.csv").rfind("query_id,rank_of_truth", 0) == 0);

        REQUIRE(run("importance --seed 5 --ckpt " + d + "/ckpt --data " + d +
                    "/data_a --encoder lesion --out " + d + "/imp.csv") == 0);
        CHECK(slurp(dir / "imp.csv").rfind("feature_name,importance", 0) == 0);

        REQUIRE(run("embed --seed 5 --ckpt " + d + "/ckpt --data " + d + "/data_a --out " + d +
                    "/emb") == 0);
        CHECK(fs::exists(dir / "emb" / "image" / "pool.f32"));
        CHECK(fs::exists(dir / "emb" / "fused" / "pool.f32"));

        REQUIRE(run("continual --seed 6 --set train.continual_epochs=1" + kSmallGen +
                    " --ckpt " + d + "/ckpt --data " + d + "/data_a --out " + d + "/ckpt2") == 0);
        CHECK(fs::exists(dir / "ckpt2" / "params.f32"));
    }

    fs::remove_all(dir);
}
