#include "nestcl/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "nestcl/errors.hpp"
#include "json_util.hpp"

namespace nestcl {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestError("cannot open " + tmp.string() + " for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IngestError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_f32_atomic(const fs::path& path, const std::vector<float>& values) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!out) throw IngestError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("missing file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<float> read_f32(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IngestError("missing file " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(float) != 0)
        throw IngestError(path.string() + " size is not a multiple of 4 bytes");
    std::vector<float> values(bytes / sizeof(float));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IngestError("short read from " + path.string());
    return values;
}

std::string format_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (const char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    return lines;
}

double parse_double(const std::string& s, const std::string& where) {
    double value = 0.0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc{} || res.ptr != end)
        throw IngestError("malformed number '" + s + "' at " + where);
    return value;
}

long parse_long(const std::string& s, const std::string& where) {
    long value = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw IngestError("malformed integer '" + s + "' at " + where);
    return value;
}

std::string feature_cell(const FeatureSpec& spec, double value, bool missing) {
    if (missing) return "";
    if (spec.categorical) return std::to_string(static_cast<long>(value));
    return format_double(value);
}

void parse_feature_cell(const FeatureSpec& spec, const std::string& cell,
                        const std::string& where, double& value, bool& missing) {
    if (cell.empty()) {
        value = 0.0;
        missing = true;
        return;
    }
    missing = false;
    if (spec.categorical) {
        const long code = parse_long(cell, where);
        if (code < 0 || static_cast<std::size_t>(code) >= spec.cardinality)
            throw IngestError("category code " + cell + " out of range at " + where);
        value = static_cast<double>(code);
    } else {
        value = parse_double(cell, where);
    }
}


} // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir) {
    fs::create_directories(dir);

    json manifest;
    manifest["format_version"] = 1;
    manifest["image_dim"] = dataset.image_dim;
    manifest["num_classes"] = dataset.num_classes;
    manifest["patient_features"] = detail::features_to_json(dataset.patient_features);
    manifest["lesion_features"] = detail::features_to_json(dataset.lesion_features);
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::string patients_csv = "patient_id";
    for (const auto& f : dataset.patient_features) patients_csv += "," + f.name;
    patients_csv += "\n";
    for (const auto& p : dataset.patients) {
        patients_csv += p.patient_id;
        for (std::size_t j = 0; j < dataset.patient_features.size(); ++j) {
            patients_csv += ",";
            patients_csv +=
                feature_cell(dataset.patient_features[j], p.patient_meta[j], p.patient_missing[j]);
        }
        patients_csv += "\n";
    }
    write_text_atomic(dir / "patients.csv", patients_csv);

    std::string lesions_csv = "lesion_id,patient_id,label";
    for (const auto& f : dataset.lesion_features) lesions_csv += "," + f.name;
    lesions_csv += "\n";
    std::vector<float> pixels;
    pixels.reserve(dataset.lesion_count() * dataset.image_dim);
    for (const auto& p : dataset.patients) {
        for (const auto& les : p.lesions) {
            lesions_csv += les.lesion_id + "," + p.patient_id + "," + std::to_string(les.label);
            for (std::size_t j = 0; j < dataset.lesion_features.size(); ++j) {
                lesions_csv += ",";
                lesions_csv += feature_cell(dataset.lesion_features[j], les.lesion_meta[j],
                                            les.lesion_missing[j]);
            }
            lesions_csv += "\n";
            pixels.insert(pixels.end(), les.image.begin(), les.image.end());
        }
    }
    write_text_atomic(dir / "lesions.csv", lesions_csv);
    write_f32_atomic(dir / "images.f32", pixels);
}

Dataset load_dataset(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IngestError("manifest.json: " + std::string(e.what()));
    }

    Dataset ds;
    try {
        if (manifest.at("format_version").get<int>() != 1)
            throw IngestError("unsupported dataset format version");
        ds.image_dim = manifest.at("image_dim").get<std::size_t>();
        ds.num_classes = manifest.at("num_classes").get<std::size_t>();
        ds.patient_features = detail::features_from_json<IngestError>(manifest.at("patient_features"), "manifest");
        ds.lesion_features = detail::features_from_json<IngestError>(manifest.at("lesion_features"), "manifest");
    } catch (const json::exception& e) {
        throw IngestError("manifest.json: " + std::string(e.what()));
    }
    if (ds.image_dim == 0) throw IngestError("manifest image_dim must be >= 1");
    if (ds.num_classes < 2) throw IngestError("manifest num_classes must be >= 2");

    const auto patient_lines = split_lines(read_text(dir / "patients.csv"));
    if (patient_lines.empty()) throw IngestError("patients.csv is empty");
    std::map<std::string, std::size_t> patient_index;
    for (std::size_t row = 1; row < patient_lines.size(); ++row) {
        const auto where = "patients.csv row " + std::to_string(row + 1);
        const auto fields = split_line(patient_lines[row]);
        if (fields.size() != 1 + ds.patient_features.size())
            throw IngestError("wrong column count at " + where);
        PatientRecord rec;
        rec.patient_id = fields[0];
        if (rec.patient_id.empty()) throw IngestError("empty patient_id at " + where);
        if (patient_index.count(rec.patient_id))
            throw IngestError("duplicate patient_id " + rec.patient_id + " at " + where);
        rec.patient_meta.resize(ds.patient_features.size());
        rec.patient_missing.resize(ds.patient_features.size());
        for (std::size_t j = 0; j < ds.patient_features.size(); ++j) {
            bool missing = false;
            parse_feature_cell(ds.patient_features[j], fields[j + 1], where, rec.patient_meta[j],
                               missing);
            rec.patient_missing[j] = missing;
        }
        patient_index[rec.patient_id] = ds.patients.size();
        ds.patients.push_back(std::move(rec));
    }

    const auto lesion_lines = split_lines(read_text(dir / "lesions.csv"));
    if (lesion_lines.empty()) throw IngestError("lesions.csv is empty");
    const auto pixels = read_f32(dir / "images.f32");
    std::size_t lesion_row = 0;
    for (std::size_t row = 1; row < lesion_lines.size(); ++row) {
        const auto where = "lesions.csv row " + std::to_string(row + 1);
        const auto fields = split_line(lesion_lines[row]);
        if (fields.size() != 3 + ds.lesion_features.size())
            throw IngestError("wrong column count at " + where);
        LesionRecord les;
        les.lesion_id = fields[0];
        const auto owner = patient_index.find(fields[1]);
        if (owner == patient_index.end())
            throw IngestError("unknown patient_id '" + fields[1] + "' at " + where);
        const long label = parse_long(fields[2], where);
        if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes)
            throw IngestError("label out of range at " + where);
        les.label = static_cast<int>(label);
        les.lesion_meta.resize(ds.lesion_features.size());
        les.lesion_missing.resize(ds.lesion_features.size());
        for (std::size_t j = 0; j < ds.lesion_features.size(); ++j) {
            bool missing = false;
            parse_feature_cell(ds.lesion_features[j], fields[j + 3], where, les.lesion_meta[j],
                               missing);
            les.lesion_missing[j] = missing;
        }
        const std::size_t offset = lesion_row * ds.image_dim;
        if (offset + ds.image_dim > pixels.size())
            throw IngestError("images.f32 too short for " + where);
        les.image.assign(pixels.begin() + static_cast<std::ptrdiff_t>(offset),
                         pixels.begin() + static_cast<std::ptrdiff_t>(offset + ds.image_dim));
        ds.patients[owner->second].lesions.push_back(std::move(les));
        ++lesion_row;
    }
    if (lesion_row * ds.image_dim != pixels.size())
        throw IngestError("images.f32 length does not match lesions.csv row count");
    for (const auto& p : ds.patients) {
        if (p.lesions.empty())
            throw IngestError("patient " + p.patient_id + " has no lesions");
    }
    return ds;
}

} // namespace nestcl
