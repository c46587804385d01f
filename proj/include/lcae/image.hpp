#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcae/error.hpp"

namespace lcae {

// Single-channel 2-D intensity grid, row-major.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), pixels(static_cast<std::size_t>(r) * c, fill) {}
  Image(int r, int c, std::vector<float> data) : rows(r), cols(c), pixels(std::move(data)) {
    if (pixels.size() != static_cast<std::size_t>(r) * c) {
      throw ContractError("image: pixel count does not match " + std::to_string(r) + "x" +
                          std::to_string(c));
    }
  }

  std::size_t size() const noexcept { return pixels.size(); }
  float& operator()(int r, int c) noexcept { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  float operator()(int r, int c) const noexcept {
    return pixels[static_cast<std::size_t>(r) * cols + c];
  }
  bool same_shape(const Image& o) const noexcept { return rows == o.rows && cols == o.cols; }
  friend bool operator==(const Image&, const Image&) = default;
};

// Binary anomaly mask, same layout as Image. Values are 0 or 1.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int r, int c) : rows(r), cols(c), bits(static_cast<std::size_t>(r) * c, 0) {}

  std::size_t size() const noexcept { return bits.size(); }
  std::uint8_t& operator()(int r, int c) noexcept { return bits[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t operator()(int r, int c) const noexcept {
    return bits[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

// 3-D grid with the first axis fastest in memory (NIfTI order).
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::string subject_id;
  std::vector<float> voxels;

  std::size_t size() const noexcept { return voxels.size(); }
  std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  float& at(int i, int j, int k) noexcept { return voxels[index(i, j, k)]; }
  float at(int i, int j, int k) const noexcept { return voxels[index(i, j, k)]; }
};

enum class Split { train, test };

inline const char* to_string(Split s) noexcept { return s == Split::train ? "train" : "test"; }

// Affine used to standardize intensities: y = (x - mean) / std.
struct Affine {
  double mean = 0.0;
  double std = 1.0;

  float apply(float x) const noexcept { return static_cast<float>((x - mean) / std); }
  float invert(float y) const noexcept { return static_cast<float>(y * std + mean); }
};

// Monotone intensity landmarks: minimum, deciles 10..90, maximum.
struct QuantileTable {
  static constexpr std::array<double, 11> levels{0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                                 0.6, 0.7, 0.8, 0.9, 1.0};
  std::array<double, 11> values{};
};

struct Dataset {
  std::vector<Image> images;
  std::vector<Mask> masks;  // empty, or one per image
  Split split = Split::train;
  std::optional<Affine> affine;
  std::optional<QuantileTable> reference;

  std::size_t size() const noexcept { return images.size(); }
  bool has_masks() const noexcept { return !masks.empty(); }
  bool empty() const noexcept { return images.empty(); }

  // Throws ContractError when masks are present but misaligned or non-binary.
  void validate() const {
    if (masks.empty()) return;
    if (masks.size() != images.size()) {
      throw ContractError("dataset: " + std::to_string(masks.size()) + " masks for " +
                          std::to_string(images.size()) + " images");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (masks[i].rows != images[i].rows || masks[i].cols != images[i].cols) {
        throw ContractError("dataset: mask " + std::to_string(i) + " shape differs from its image");
      }
      for (auto b : masks[i].bits) {
        if (b > 1) throw ContractError("dataset: mask " + std::to_string(i) + " is not binary");
      }
    }
  }
};

inline std::size_t count_non_finite(std::span<const float> v) noexcept {
  std::size_t bad = 0;
  for (float x : v) bad += std::isfinite(x) ? 0 : 1;
  return bad;
}

}  // namespace lcae
