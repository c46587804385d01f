#pragma once

// Volumes to model-ready datasets: histogram normalization against a reference
// built from the training volumes, slice extraction, area downsampling, then one
// global standardization fitted on the training images and reused for the test split.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcae/image.hpp"
#include "lcae/preprocess.hpp"

namespace lcae {

struct PrepareOptions {
  int axis = 2;
  std::optional<std::pair<int, int>> slice_range;  // inclusive; all planes when absent
  double min_foreground = 0.05;
  int image_size = 32;
  bool histogram_normalize = true;
  bool nonzero_statistics = true;
};

struct PreparedData {
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::pair<int, int> plane_range(const Volume& v, const PrepareOptions& opt) {
  if (opt.slice_range) return *opt.slice_range;
  return {0, v.dims[static_cast<std::size_t>(opt.axis)] - 1};
}

inline void append_slices(const Volume& v, const Volume* mask_volume, const PrepareOptions& opt,
                          const std::optional<QuantileTable>& reference, Dataset& out) {
  const Volume normalized = reference ? histogram_normalize(v, *reference) : v;
  const auto [first, last] = plane_range(v, opt);
  for (auto& s : extract_slices(normalized, opt.axis, first, last, opt.min_foreground)) {
    out.images.push_back(downsample(s.image, opt.image_size, opt.image_size));
    if (mask_volume) {
      const Image plane = volume_plane(*mask_volume, opt.axis, s.index);
      Mask m(plane.rows, plane.cols);
      for (std::size_t i = 0; i < plane.pixels.size(); ++i) m.bits[i] = plane.pixels[i] != 0.0f ? 1 : 0;
      out.masks.push_back(downsample_mask(m, opt.image_size, opt.image_size));
    }
  }
}

}  // namespace detail

// `test_masks` is either empty or aligned one-to-one with `test`.
inline PreparedData prepare_datasets(std::span<const Volume> train, std::span<const Volume> test,
                                     std::span<const Volume> test_masks, const PrepareOptions& opt = {}) {
  if (train.empty()) throw ContractError("prepare: no training volumes");
  if (!test_masks.empty() && test_masks.size() != test.size()) {
    throw ContractError("prepare: " + std::to_string(test_masks.size()) + " mask volumes for " +
                        std::to_string(test.size()) + " test volumes");
  }
  for (std::size_t i = 0; i < test_masks.size(); ++i) {
    if (test_masks[i].dims != test[i].dims) throw ContractError("prepare: mask volume " + std::to_string(i) + " shape differs from its test volume");
  }
  std::optional<QuantileTable> reference;
  if (opt.histogram_normalize) reference = build_reference(train);

  PreparedData out;
  out.train.split = Split::train;
  out.test.split = Split::test;
  for (const auto& v : train) detail::append_slices(v, nullptr, opt, reference, out.train);
  for (std::size_t i = 0; i < test.size(); ++i) {
    detail::append_slices(test[i], test_masks.empty() ? nullptr : &test_masks[i], opt, reference, out.test);
  }
  if (out.train.empty()) throw DegenerateInputError("prepare: every training slice is below the foreground threshold");
  out.train = standardize(out.train, opt.nonzero_statistics);
  out.train.reference = reference;
  if (!out.test.empty()) out.test = apply_standardization(std::move(out.test), *out.train.affine);
  out.test.reference = reference;
  return out;
}

}  // namespace lcae
