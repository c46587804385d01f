#pragma once

// Volume readers/writers: NIfTI-1 (.nii, .nii.gz) and a raw float32 grid with a
// JSON sidecar holding {"shape": [nx, ny, nz], "spacing": [...], "subject_id": "..."}.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lcae/error.hpp"
#include "lcae/image.hpp"

namespace lcae::io {

namespace fs = std::filesystem;

namespace detail {

template <class T>
T byteswap_value(T v) noexcept {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <class T>
T read_field(const unsigned char* hdr, std::size_t offset, bool swap) noexcept {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <class T>
void write_field(unsigned char* hdr, std::size_t offset, T v) noexcept {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  std::memcpy(hdr + offset, &v, sizeof(T));
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::string subject_from_path(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".raw"}) {
    if (ends_with(name, ext)) return name.substr(0, name.size() - std::strlen(ext));
  }
  return p.stem().string();
}

class GzReader {
 public:
  explicit GzReader(const fs::path& p) : handle_(gzopen(p.string().c_str(), "rb")), path_(p) {
    if (!handle_) throw IngestionError("cannot open " + p.string());
  }
  ~GzReader() {
    if (handle_) gzclose(handle_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read(void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
      unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      int got = gzread(handle_, out, chunk);
      if (got <= 0) throw IngestionError("truncated file " + path_.string());
      out += got;
      n -= static_cast<std::size_t>(got);
    }
  }
  void skip(std::size_t n) {
    std::vector<unsigned char> tmp(std::min<std::size_t>(n, 4096));
    while (n > 0) {
      std::size_t k = std::min(n, tmp.size());
      read(tmp.data(), k);
      n -= k;
    }
  }

 private:
  gzFile handle_;
  fs::path path_;
};

template <class T>
void convert_samples(const std::vector<unsigned char>& raw, bool swap, std::vector<float>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<float>(v);
  }
}

inline void require_finite(const Volume& v, const std::string& source) {
  std::size_t bad = count_non_finite(v.voxels);
  if (bad > 0) {
    throw DataIntegrityError(source + ": " + std::to_string(bad) + " non-finite voxel" +
                                 (bad == 1 ? "" : "s"),
                             bad);
  }
}

}  // namespace detail

inline Volume load_nifti(const fs::path& path) {
  detail::GzReader in(path);
  unsigned char hdr[348];
  in.read(hdr, sizeof(hdr));

  bool swap = false;
  std::int32_t sizeof_hdr = detail::read_field<std::int32_t>(hdr, 0, false);
  if (sizeof_hdr != 348) {
    if (detail::byteswap_value(sizeof_hdr) != 348) {
      throw IngestionError(path.string() + ": not a NIfTI-1 file");
    }
    swap = true;
  }
  if (std::memcmp(hdr + 344, "n+1", 3) != 0 && std::memcmp(hdr + 344, "ni1", 3) != 0) {
    throw IngestionError(path.string() + ": missing NIfTI-1 magic");
  }
  if (std::memcmp(hdr + 344, "ni1", 3) == 0) {
    throw IngestionError(path.string() + ": two-file NIfTI (.hdr/.img) is not supported");
  }

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = detail::read_field<std::int16_t>(hdr, 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw IngestionError(path.string() + ": invalid dim[0]");
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) throw IngestionError(path.string() + ": only 3-D volumes are supported");
  }

  Volume vol;
  for (int a = 0; a < 3; ++a) {
    vol.dims[a] = (a + 1 <= dim[0]) ? dim[a + 1] : 1;
    if (vol.dims[a] < 1) throw IngestionError(path.string() + ": non-positive dimension");
    float pix = detail::read_field<float>(hdr, 76 + 4 * (a + 1), swap);
    vol.spacing[a] = pix > 0.0f ? pix : 1.0f;
  }
  vol.subject_id = detail::subject_from_path(path);

  const auto datatype = detail::read_field<std::int16_t>(hdr, 70, swap);
  const float vox_offset = detail::read_field<float>(hdr, 108, swap);
  const float slope = detail::read_field<float>(hdr, 112, swap);
  const float inter = detail::read_field<float>(hdr, 116, swap);

  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: case 256: bytes_per = 1; break;
    case 4: case 512: bytes_per = 2; break;
    case 8: case 16: case 768: bytes_per = 4; break;
    case 64: case 1024: case 1280: bytes_per = 8; break;
    default:
      throw IngestionError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }

  const std::size_t count = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  const auto offset = static_cast<std::size_t>(vox_offset < 348.0f ? 352.0f : vox_offset);
  in.skip(offset - sizeof(hdr));
  std::vector<unsigned char> raw(count * bytes_per);
  in.read(raw.data(), raw.size());

  switch (datatype) {
    case 2: detail::convert_samples<std::uint8_t>(raw, swap, vol.voxels); break;
    case 256: detail::convert_samples<std::int8_t>(raw, swap, vol.voxels); break;
    case 4: detail::convert_samples<std::int16_t>(raw, swap, vol.voxels); break;
    case 512: detail::convert_samples<std::uint16_t>(raw, swap, vol.voxels); break;
    case 8: detail::convert_samples<std::int32_t>(raw, swap, vol.voxels); break;
    case 768: detail::convert_samples<std::uint32_t>(raw, swap, vol.voxels); break;
    case 16: detail::convert_samples<float>(raw, swap, vol.voxels); break;
    case 64: detail::convert_samples<double>(raw, swap, vol.voxels); break;
    case 1024: detail::convert_samples<std::int64_t>(raw, swap, vol.voxels); break;
    case 1280: detail::convert_samples<std::uint64_t>(raw, swap, vol.voxels); break;
  }
  // Stored values are scaled only when the header asks for it.
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& v : vol.voxels) v = v * slope + inter;
  }
  detail::require_finite(vol, path.string());
  return vol;
}

// Writes a float32 NIfTI-1 single file; gzip-compressed when the name ends in .gz.
inline void save_nifti(const Volume& vol, const fs::path& path) {
  unsigned char hdr[352] = {};
  detail::write_field<std::int32_t>(hdr, 0, 348);
  detail::write_field<std::int16_t>(hdr, 40, 3);
  for (int a = 0; a < 3; ++a) {
    detail::write_field<std::int16_t>(hdr, 42 + 2 * a, static_cast<std::int16_t>(vol.dims[a]));
    detail::write_field<float>(hdr, 80 + 4 * a, vol.spacing[a]);
  }
  for (int a = 3; a < 7; ++a) detail::write_field<std::int16_t>(hdr, 42 + 2 * a, 1);
  detail::write_field<float>(hdr, 76, 1.0f);
  detail::write_field<std::int16_t>(hdr, 70, 16);
  detail::write_field<std::int16_t>(hdr, 72, 32);
  detail::write_field<float>(hdr, 108, 352.0f);
  detail::write_field<float>(hdr, 112, 1.0f);
  detail::write_field<float>(hdr, 116, 0.0f);
  hdr[123] = 2;  // mm
  std::memcpy(hdr + 344, "n+1", 4);

  std::vector<float> data = vol.voxels;
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) v = detail::byteswap_value(v);
  }
  const bool gz = detail::ends_with(path.string(), ".gz");
  if (gz) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw IngestionError("cannot write " + path.string());
    bool ok = gzwrite(f, hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr));
    ok = ok && gzwrite(f, data.data(), static_cast<unsigned>(data.size() * sizeof(float))) ==
                   static_cast<int>(data.size() * sizeof(float));
    gzclose(f);
    if (!ok) throw IngestionError("short write to " + path.string());
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw IngestionError("short write to " + path.string());
  }
}

inline fs::path raw_sidecar(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

inline Volume load_raw(const fs::path& path) {
  const fs::path sidecar = raw_sidecar(path);
  std::ifstream js(sidecar);
  if (!js) throw IngestionError("missing sidecar " + sidecar.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(sidecar.string() + ": " + e.what());
  }
  Volume vol;
  try {
    auto shape = meta.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw IngestionError(sidecar.string() + ": shape must have 3 entries");
    for (int a = 0; a < 3; ++a) {
      if (shape[a] < 1) throw IngestionError(sidecar.string() + ": non-positive dimension");
      vol.dims[a] = shape[a];
    }
    if (meta.contains("spacing")) {
      auto sp = meta["spacing"].get<std::vector<float>>();
      if (sp.size() == 3) std::copy(sp.begin(), sp.end(), vol.spacing.begin());
    }
    vol.subject_id = meta.value("subject_id", detail::subject_from_path(path));
    if (meta.value("dtype", std::string("float32")) != "float32") {
      throw IngestionError(sidecar.string() + ": only float32 raw volumes are supported");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(sidecar.string() + ": " + e.what());
  }

  const std::size_t count = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IngestionError("cannot open " + path.string());
  if (static_cast<std::size_t>(in.tellg()) != count * sizeof(float)) {
    throw IngestionError(path.string() + ": size does not match sidecar shape");
  }
  in.seekg(0);
  vol.voxels.resize(count);
  in.read(reinterpret_cast<char*>(vol.voxels.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : vol.voxels) v = detail::byteswap_value(v);
  }
  detail::require_finite(vol, path.string());
  return vol;
}

inline void save_raw(const Volume& vol, const fs::path& path) {
  std::vector<float> data = vol.voxels;
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) v = detail::byteswap_value(v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  nlohmann::json meta = {{"shape", vol.dims},
                         {"spacing", vol.spacing},
                         {"subject_id", vol.subject_id},
                         {"dtype", "float32"},
                         {"endianness", "little"}};
  std::ofstream js(raw_sidecar(path));
  js << meta.dump(2) << '\n';
  if (!out || !js) throw IngestionError("short write to " + path.string());
}

// Dispatches on extension: .nii / .nii.gz, otherwise the raw format.
inline Volume load_volume(const fs::path& path) {
  if (!fs::exists(path)) throw IngestionError("no such file " + path.string());
  const std::string name = path.filename().string();
  if (detail::ends_with(name, ".nii") || detail::ends_with(name, ".nii.gz")) return load_nifti(path);
  return load_raw(path);
}

}  // namespace lcae::io
