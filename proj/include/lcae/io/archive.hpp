#pragma once

// Dataset archive: a directory with `images.f32` (one little-endian float32
// record of rows*cols values per image, row-major) and `manifest.json`.
// Masks, when present, are stored in the manifest as the flat indices of
// their set pixels.

#include <bit>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lcae/error.hpp"
#include "lcae/image.hpp"

namespace lcae::io {

namespace fs = std::filesystem;

inline constexpr int kArchiveVersion = 1;
inline constexpr const char* kRecordsFile = "images.f32";
inline constexpr const char* kManifestFile = "manifest.json";

inline void write_f32_records(const fs::path& path, const std::vector<std::vector<float>>& records) {
  static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& r : records) {
    out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(r.size() * sizeof(float)));
  }
  if (!out) throw IngestionError("short write to " + path.string());
}

inline std::vector<float> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IngestionError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) throw IngestionError(path.string() + ": size is not a multiple of 4");
  std::vector<float> data(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  return data;
}

inline nlohmann::json quantiles_to_json(const QuantileTable& t) {
  return {{"levels", QuantileTable::levels}, {"values", t.values}};
}

inline QuantileTable quantiles_from_json(const nlohmann::json& j) {
  QuantileTable t;
  auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != t.values.size()) throw IngestionError("quantile table must have 11 values");
  std::copy(values.begin(), values.end(), t.values.begin());
  return t;
}

inline nlohmann::json affine_to_json(const Affine& a) { return {{"mean", a.mean}, {"std", a.std}}; }

inline Affine affine_from_json(const nlohmann::json& j) {
  return Affine{j.at("mean").get<double>(), j.at("std").get<double>()};
}

// `extra` is merged into the manifest under "provenance".
inline void save_archive(const Dataset& dataset, const fs::path& dir,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  dataset.validate();
  fs::create_directories(dir);
  const int rows = dataset.empty() ? 0 : dataset.images.front().rows;
  const int cols = dataset.empty() ? 0 : dataset.images.front().cols;
  std::vector<std::vector<float>> records;
  records.reserve(dataset.size());
  for (const auto& img : dataset.images) {
    if (img.rows != rows || img.cols != cols) throw ContractError("archive: images differ in shape");
    records.push_back(img.pixels);
  }
  write_f32_records(dir / kRecordsFile, records);

  nlohmann::json m;
  m["format"] = "lcae-dataset";
  m["format_version"] = kArchiveVersion;
  m["split"] = to_string(dataset.split);
  m["count"] = dataset.size();
  m["rows"] = rows;
  m["cols"] = cols;
  m["records"] = kRecordsFile;
  m["dtype"] = "float32";
  m["layout"] = "row-major";
  m["normalization"] = dataset.affine ? affine_to_json(*dataset.affine) : nlohmann::json(nullptr);
  m["reference_quantiles"] =
      dataset.reference ? quantiles_to_json(*dataset.reference) : nlohmann::json(nullptr);
  if (dataset.has_masks()) {
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& mk : dataset.masks) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < mk.size(); ++i) {
        if (mk.bits[i]) idx.push_back(i);
      }
      masks.push_back(idx);
    }
    m["masks"] = std::move(masks);
  }
  if (!extra.empty()) m["provenance"] = extra;

  std::ofstream js(dir / kManifestFile);
  if (!js) throw IngestionError("cannot write manifest in " + dir.string());
  js << m.dump(2) << '\n';
}

inline nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream js(dir / kManifestFile);
  if (!js) throw IngestionError("no manifest in " + dir.string());
  try {
    return nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError((dir / kManifestFile).string() + ": " + e.what());
  }
}

inline Dataset load_archive(const fs::path& dir) {
  const auto m = read_manifest(dir);
  Dataset ds;
  try {
    if (m.at("format").get<std::string>() != "lcae-dataset") throw IngestionError(dir.string() + ": not a dataset archive");
    if (m.at("format_version").get<int>() != kArchiveVersion) {
      throw IngestionError(dir.string() + ": unsupported archive version");
    }
    ds.split = m.at("split").get<std::string>() == "test" ? Split::test : Split::train;
    const auto count = m.at("count").get<std::size_t>();
    const int rows = m.at("rows").get<int>();
    const int cols = m.at("cols").get<int>();
    const auto data = read_f32_file(dir / m.at("records").get<std::string>());
    const std::size_t per = static_cast<std::size_t>(rows) * cols;
    if (data.size() != count * per) throw IngestionError(dir.string() + ": record file does not match manifest");
    const std::size_t bad = count_non_finite(data);
    if (bad) throw DataIntegrityError(dir.string() + ": " + std::to_string(bad) + " non-finite pixels", bad);
    ds.images.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      ds.images.emplace_back(rows, cols, std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                            data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    }
    if (!m.at("normalization").is_null()) ds.affine = affine_from_json(m["normalization"]);
    if (!m.at("reference_quantiles").is_null()) ds.reference = quantiles_from_json(m["reference_quantiles"]);
    if (m.contains("masks")) {
      const auto& masks = m["masks"];
      if (masks.size() != count) throw IngestionError(dir.string() + ": mask count does not match images");
      for (const auto& idx : masks) {
        Mask mk(rows, cols);
        for (auto i : idx.get<std::vector<std::size_t>>()) {
          if (i >= per) throw IngestionError(dir.string() + ": mask index out of range");
          mk.bits[i] = 1;
        }
        ds.masks.push_back(std::move(mk));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError((dir / kManifestFile).string() + ": " + e.what());
  }
  return ds;
}

}  // namespace lcae::io
