#include "nestcl/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "json_util.hpp"
#include "nestcl/dataset_io.hpp"
#include "nestcl/errors.hpp"
#include "nestcl/rng.hpp"

namespace nestcl {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelState::reset_moments() {
    const std::size_t n = model_param_count(model);
    m1.assign(n, 0.0);
    m2.assign(n, 0.0);
    step = 0;
}

namespace {

constexpr int kFormatVersion = 1;

Partition partition_from_name(const std::string& name) {
    if (name == "embedding") return Partition::Embedding;
    if (name == "body") return Partition::Body;
    if (name == "stats") return Partition::Stats;
    if (name == "fusion") return Partition::Fusion;
    throw CheckpointError("unknown partition '" + name + "'");
}

std::vector<float> to_f32(const std::vector<double>& values) {
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
    return out;
}

std::vector<double> to_f64(const std::vector<float>& values) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<double>(values[i]);
    return out;
}

} // namespace

void save_checkpoint(const ModelState& state, const fs::path& dir) {
    fs::create_directories(dir);
    const auto segments = model_segments(state.model);
    const std::size_t count = model_param_count(state.model);
    if (state.m1.size() != count || state.m2.size() != count)
        throw CheckpointError("moment vectors do not match parameter count");

    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["architecture"] = state.model.nested() ? "nested" : "flat";
    manifest["step"] = state.step;
    manifest["dims"] = {{"embed_dim", state.model.dims.embed_dim},
                        {"token_dim", state.model.dims.token_dim},
                        {"hidden_dim", state.model.dims.hidden_dim}};
    manifest["image"] = {{"input_dim", state.model.image.input_dim}};
    manifest["lesion_tab"] = {
        {"features", detail::features_to_json(state.model.lesion_tab.features)}};
    if (state.model.nested()) {
        manifest["patient_tab"] = {
            {"features", detail::features_to_json(state.model.patient_tab.features)}};
    }
    manifest["param_count"] = count;
    json seg_arr = json::array();
    for (const auto& seg : segments) {
        seg_arr.push_back({{"component", seg.component},
                           {"name", seg.name},
                           {"partition", partition_name(seg.partition)},
                           {"rows", seg.rows},
                           {"cols", seg.cols},
                           {"offset", seg.offset}});
    }
    manifest["segments"] = std::move(seg_arr);

    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    write_f32_atomic(dir / "params.f32", to_f32(flatten_params(state.model)));
    std::vector<double> moments = state.m1;
    moments.insert(moments.end(), state.m2.begin(), state.m2.end());
    write_f32_atomic(dir / "moments.f32", to_f32(moments));
}

ModelState load_checkpoint(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const IngestError& e) {
        throw CheckpointError(e.what());
    } catch (const json::exception& e) {
        throw CheckpointError("manifest.json: " + std::string(e.what()));
    }

    ModelState state;
    try {
        if (manifest.at("format_version").get<int>() != kFormatVersion)
            throw CheckpointError("unsupported checkpoint format version");
        const auto arch_name = manifest.at("architecture").get<std::string>();
        if (arch_name != "nested" && arch_name != "flat")
            throw CheckpointError("unknown architecture '" + arch_name + "'");
        const Architecture arch =
            arch_name == "nested" ? Architecture::Nested : Architecture::Flat;

        ModelDims dims;
        dims.embed_dim = manifest.at("dims").at("embed_dim").get<std::size_t>();
        dims.token_dim = manifest.at("dims").at("token_dim").get<std::size_t>();
        dims.hidden_dim = manifest.at("dims").at("hidden_dim").get<std::size_t>();

        const auto input_dim = manifest.at("image").at("input_dim").get<std::size_t>();
        const auto lesion_features = detail::features_from_json<CheckpointError>(
            manifest.at("lesion_tab").at("features"), "checkpoint manifest");

        // Parameter values are overwritten below; the seed only shapes the
        // containers.
        Rng shape_rng(0);
        Model model;
        model.arch = arch;
        model.dims = dims;
        model.image =
            ImageEncoder::create(input_dim, dims.hidden_dim, dims.embed_dim, shape_rng);
        model.lesion_tab =
            TabularEncoder::create(lesion_features, dims.token_dim, dims.embed_dim, shape_rng);
        if (arch == Architecture::Nested) {
            const auto patient_features = detail::features_from_json<CheckpointError>(
                manifest.at("patient_tab").at("features"), "checkpoint manifest");
            model.patient_tab = TabularEncoder::create(patient_features, dims.token_dim,
                                                       dims.embed_dim, shape_rng);
            model.fusion = FusionParams::create(dims.embed_dim, shape_rng);
        }

        const std::size_t count = model_param_count(model);
        if (manifest.at("param_count").get<std::size_t>() != count)
            throw CheckpointError("param_count does not match model shape");

        const auto segments = model_segments(model);
        const auto& seg_arr = manifest.at("segments");
        if (seg_arr.size() != segments.size())
            throw CheckpointError("segment table size mismatch");
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const auto& entry = seg_arr.at(i);
            if (entry.at("component").get<std::string>() != segments[i].component ||
                entry.at("name").get<std::string>() != segments[i].name ||
                partition_from_name(entry.at("partition").get<std::string>()) !=
                    segments[i].partition ||
                entry.at("rows").get<std::size_t>() != segments[i].rows ||
                entry.at("cols").get<std::size_t>() != segments[i].cols ||
                entry.at("offset").get<std::size_t>() != segments[i].offset) {
                throw CheckpointError("segment " + std::to_string(i) +
                                      " does not match model shape");
            }
        }

        std::vector<float> params;
        std::vector<float> moments;
        try {
            params = read_f32(dir / "params.f32");
            moments = read_f32(dir / "moments.f32");
        } catch (const IngestError& e) {
            throw CheckpointError(e.what());
        }
        if (params.size() != count) throw CheckpointError("params.f32 truncated or oversized");
        if (moments.size() != 2 * count)
            throw CheckpointError("moments.f32 truncated or oversized");

        unflatten_params(model, to_f64(params));
        state.model = std::move(model);
        state.m1 = to_f64({moments.begin(), moments.begin() + static_cast<std::ptrdiff_t>(count)});
        state.m2 = to_f64({moments.begin() + static_cast<std::ptrdiff_t>(count), moments.end()});
        state.step = manifest.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
        throw CheckpointError("manifest.json: " + std::string(e.what()));
    }
    return state;
}

std::string checkpoint_hash(const fs::path& dir) {
    std::ifstream in(dir / "params.f32", std::ios::binary);
    if (!in) throw CheckpointError("missing " + (dir / "params.f32").string());
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const auto got = static_cast<std::size_t>(in.gcount());
        for (std::size_t i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001B3ULL;
        }
        if (got < sizeof(buf)) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    return hex;
}

} // namespace nestcl
