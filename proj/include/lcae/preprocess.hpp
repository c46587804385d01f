#pragma once

// Intensity normalization and slicing: volume -> 32x32 standardized slices.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lcae/error.hpp"
#include "lcae/image.hpp"

namespace lcae {

namespace detail {

// Linearly interpolated quantile of sorted data (numpy's default rule).
inline double sorted_quantile(std::span<const float> sorted, double q) {
  if (sorted.empty()) throw DegenerateInputError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

}  // namespace detail

// Landmarks of the nonzero voxels of one volume.
inline QuantileTable intensity_landmarks(const Volume& volume) {
  std::vector<float> fg;
  fg.reserve(volume.size());
  for (float v : volume.voxels) {
    if (v != 0.0f) fg.push_back(v);
  }
  if (fg.empty()) throw DegenerateInputError(volume.subject_id + ": volume has no nonzero voxels");
  std::sort(fg.begin(), fg.end());
  QuantileTable t;
  for (std::size_t i = 0; i < QuantileTable::levels.size(); ++i) {
    t.values[i] = detail::sorted_quantile(fg, QuantileTable::levels[i]);
  }
  return t;
}

// Reference profile: landmark-wise mean over training subjects.
inline QuantileTable build_reference(std::span<const Volume> training) {
  if (training.empty()) throw DegenerateInputError("reference profile needs at least one volume");
  QuantileTable ref;
  for (const auto& v : training) {
    auto t = intensity_landmarks(v);
    for (std::size_t i = 0; i < ref.values.size(); ++i) ref.values[i] += t.values[i];
  }
  for (auto& x : ref.values) x /= static_cast<double>(training.size());
  return ref;
}

// Piecewise-linear map of the volume's landmarks onto the reference landmarks.
// Zero voxels are background and stay zero.
inline Volume histogram_normalize(const Volume& volume, const QuantileTable& reference) {
  for (std::size_t i = 1; i < reference.values.size(); ++i) {
    if (!(reference.values[i] >= reference.values[i - 1])) {
      throw ContractError("reference quantile table is not monotone");
    }
  }
  const QuantileTable own = intensity_landmarks(volume);
  if (own.values.back() == own.values.front()) {
    throw DegenerateInputError(volume.subject_id + ": constant-intensity volume");
  }

  // Collapse repeated source landmarks so every segment has positive width.
  std::vector<double> src, dst;
  for (std::size_t i = 0; i < own.values.size(); ++i) {
    if (!src.empty() && own.values[i] == src.back()) continue;
    src.push_back(own.values[i]);
    dst.push_back(reference.values[i]);
  }

  Volume out = volume;
  for (auto& v : out.voxels) {
    if (v == 0.0f) continue;
    const double x = v;
    auto it = std::upper_bound(src.begin(), src.end(), x);
    std::size_t seg = it == src.begin() ? 0 : static_cast<std::size_t>(it - src.begin()) - 1;
    seg = std::min(seg, src.size() - 2);
    const double t = (x - src[seg]) / (src[seg + 1] - src[seg]);
    v = static_cast<float>(dst[seg] + t * (dst[seg + 1] - dst[seg]));
  }
  return out;
}

// Pooled mean and population standard deviation over every pixel of the dataset,
// or over nonzero pixels only.
inline Affine fit_standardization(const Dataset& dataset, bool nonzero_only = false) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& img : dataset.images) {
    for (float p : img.pixels) {
      if (nonzero_only && p == 0.0f) continue;
      sum += p;
      ++n;
    }
  }
  if (n == 0) throw DegenerateInputError("standardize: dataset has no pixels");
  const double mean = sum / static_cast<double>(n);
  for (const auto& img : dataset.images) {
    for (float p : img.pixels) {
      if (nonzero_only && p == 0.0f) continue;
      sq += (p - mean) * (p - mean);
    }
  }
  const double var = sq / static_cast<double>(n);
  if (!(var > 0.0)) throw DegenerateInputError("standardize: zero pooled variance");
  return Affine{mean, std::sqrt(var)};
}

inline Dataset apply_standardization(Dataset dataset, const Affine& affine) {
  for (auto& img : dataset.images) {
    for (auto& p : img.pixels) p = affine.apply(p);
  }
  dataset.affine = affine;
  return dataset;
}

inline Dataset standardize(const Dataset& dataset, bool nonzero_only = false) {
  return apply_standardization(dataset, fit_standardization(dataset, nonzero_only));
}

inline Dataset inverse_standardize(Dataset dataset) {
  if (!dataset.affine) throw ContractError("inverse_standardize: dataset carries no affine");
  const Affine a = *dataset.affine;
  for (auto& img : dataset.images) {
    for (auto& p : img.pixels) p = a.invert(p);
  }
  dataset.affine.reset();
  return dataset;
}

struct Slice {
  int index = 0;
  Image image;
};

// Plane `index` along `axis`. The remaining axes p < q become (cols, rows), so an
// axis-2 slice shares the volume's memory order.
inline Image volume_plane(const Volume& volume, int axis, int index) {
  const int p = axis == 0 ? 1 : 0;
  const int q = axis == 2 ? 1 : 2;
  Image img(volume.dims[q], volume.dims[p]);
  std::array<int, 3> ijk{};
  ijk[axis] = index;
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      ijk[p] = c;
      ijk[q] = r;
      img(r, c) = volume.at(ijk[0], ijk[1], ijk[2]);
    }
  }
  return img;
}

// Planes first..last (inclusive) in order; planes with fewer than `min_foreground`
// nonzero pixels (as a fraction) are dropped.
inline std::vector<Slice> extract_slices(const Volume& volume, int axis, int first, int last,
                                         double min_foreground = 0.05) {
  if (axis < 0 || axis > 2) throw BoundsError("extract_slices: axis must be 0, 1 or 2");
  if (first < 0 || last >= volume.dims[axis] || first > last) {
    throw BoundsError("extract_slices: range [" + std::to_string(first) + ", " + std::to_string(last) +
                      "] outside axis of length " + std::to_string(volume.dims[axis]));
  }
  std::vector<Slice> out;
  for (int k = first; k <= last; ++k) {
    Image img = volume_plane(volume, axis, k);
    std::size_t nz = 0;
    for (float v : img.pixels) nz += v != 0.0f;
    if (static_cast<double>(nz) < min_foreground * static_cast<double>(img.size())) continue;
    out.push_back({k, std::move(img)});
  }
  return out;
}

namespace detail {

// Row-stochastic area-averaging weights from `src` samples onto `dst` bins.
inline std::vector<double> area_weights(int src, int dst) {
  std::vector<double> w(static_cast<std::size_t>(dst) * src, 0.0);
  const double scale = static_cast<double>(src) / dst;
  for (int o = 0; o < dst; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0) w[static_cast<std::size_t>(o) * src + s] = overlap;
    }
  }
  // Each bin normalized by its total overlap.
  for (int o = 0; o < dst; ++o) {
    double total = 0.0;
    for (int s = 0; s < src; ++s) total += w[static_cast<std::size_t>(o) * src + s];
    for (int s = 0; s < src; ++s) w[static_cast<std::size_t>(o) * src + s] /= total;
  }
  return w;
}

}  // namespace detail

// Area-averaging resample to rows x cols. Exact block means for integer factors.
inline Image downsample(const Image& image, int rows = 32, int cols = 32) {
  if (image.rows < rows || image.cols < cols) {
    throw SizeError("downsample: source " + std::to_string(image.rows) + "x" + std::to_string(image.cols) +
                    " smaller than target " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  const auto wr = detail::area_weights(image.rows, rows);
  const auto wc = detail::area_weights(image.cols, cols);
  // Columns first, then rows.
  std::vector<double> tmp(static_cast<std::size_t>(image.rows) * cols, 0.0);
  for (int r = 0; r < image.rows; ++r) {
    for (int o = 0; o < cols; ++o) {
      double acc = 0.0;
      for (int c = 0; c < image.cols; ++c) {
        const double w = wc[static_cast<std::size_t>(o) * image.cols + c];
        if (w != 0.0) acc += w * image(r, c);
      }
      tmp[static_cast<std::size_t>(r) * cols + o] = acc;
    }
  }
  Image out(rows, cols);
  for (int o = 0; o < rows; ++o) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < image.rows; ++r) {
        const double w = wr[static_cast<std::size_t>(o) * image.rows + r];
        if (w != 0.0) acc += w * tmp[static_cast<std::size_t>(r) * cols + c];
      }
      out(o, c) = static_cast<float>(acc);
    }
  }
  return out;
}

// Masks are area-averaged then thresholded at one half.
inline Mask downsample_mask(const Mask& mask, int rows = 32, int cols = 32) {
  Image as_float(mask.rows, mask.cols);
  for (std::size_t i = 0; i < mask.size(); ++i) as_float.pixels[i] = mask.bits[i] ? 1.0f : 0.0f;
  Image small = downsample(as_float, rows, cols);
  Mask out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.bits[i] = small.pixels[i] >= 0.5f ? 1 : 0;
  return out;
}

}  // namespace lcae
