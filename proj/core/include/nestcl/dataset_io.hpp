#pragma once

#include <filesystem>
#include <string>

#include "nestcl/data.hpp"

namespace nestcl {

// Dataset directory layout:
//   patients.csv   patient_id, then one column per patient feature
//   lesions.csv    lesion_id, patient_id, label, then lesion feature columns
//   images.f32     little-endian f32, image_dim values per lesion, in
//                  lesions.csv row order
//   manifest.json  dims, num_classes, feature names/kinds, format version
// Missing values are empty CSV cells. Text is UTF-8 with \n line endings.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Shared file helpers (atomic: write to <path>.tmp, then rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_f32_atomic(const std::filesystem::path& path, const std::vector<float>& values);
std::string read_text(const std::filesystem::path& path);
std::vector<float> read_f32(const std::filesystem::path& path);

// Round-trip-exact decimal formatting for CSV payloads.
std::string format_double(double value);

} // namespace nestcl
