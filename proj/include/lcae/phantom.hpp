#pragma once

// Synthetic "healthy" slices and labeled hyperintense anomalies.
//
// A healthy phantom is an anti-aliased ellipse with a bright rim, a pair of dark
// inner ellipses whose size follows a random slice level, and a smooth random
// intensity field. Background is exactly zero.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lcae/error.hpp"
#include "lcae/image.hpp"
#include "lcae/preprocess.hpp"

namespace lcae {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool valid() const noexcept { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }
  template <class Rng>
  double draw(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return lo + (hi - lo) * u;
  }
};

struct AnomalyParams {
  Range radius{2.0, 4.0};   // pixels, drawn as an integer
  Range offset{0.5, 1.5};   // standardized intensity units
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  int n_images = 1;
  int size = 32;
  Range semi_major{10.0, 13.5};
  Range semi_minor{8.0, 11.5};
  Range orientation{-0.4, 0.4};  // radians
  Range center_shift{-1.5, 1.5};
  Range slice_level{0.0, 1.0};   // scales the inner structures
  Range texture_amplitude{0.05, 0.8};
  Range rim_contrast{0.2, 0.5};
  AnomalyParams anomaly{};

  void validate() const {
    if (n_images < 1) throw ConfigError("phantom: n_images must be >= 1");
    if (size < 8) throw ConfigError("phantom: size must be >= 8");
    for (const Range* r : {&semi_major, &semi_minor, &orientation, &center_shift, &slice_level,
                           &texture_amplitude, &rim_contrast, &anomaly.radius, &anomaly.offset}) {
      if (!r->valid()) throw ConfigError("phantom: empty or non-finite range");
    }
    if (anomaly.radius.lo < 1.0) throw ConfigError("phantom: anomaly radius must be >= 1 pixel");
    if (semi_minor.lo <= 0.0 || semi_major.lo <= 0.0) throw ConfigError("phantom: ellipse axes must be positive");
  }
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  // Normalized radial coordinate; < 1 inside.
  double rho(double x, double y) const noexcept {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return std::sqrt(u * u + v * v);
  }
};

}  // namespace detail

inline Image render_healthy_phantom(const PhantomSpec& spec, std::uint64_t index) {
  auto rng = detail::stream(spec.seed, index, 0x4845414cu);
  const double mid = 0.5 * (spec.size - 1);
  const double theta = spec.orientation.draw(rng);
  const double a = spec.semi_major.draw(rng), b = spec.semi_minor.draw(rng);
  const double cx = mid + spec.center_shift.draw(rng), cy = mid + spec.center_shift.draw(rng);
  const detail::Ellipse brain{cx, cy, a, b, std::cos(theta), std::sin(theta)};

  const double level = spec.slice_level.draw(rng);
  const double rim = spec.rim_contrast.draw(rng);
  const double va = (0.15 + 0.25 * level) * a, vb = (0.08 + 0.12 * level) * b;
  const double vsep = (0.25 + 0.1 * level) * b;
  const detail::Ellipse vent_a{cx + vsep * std::sin(theta), cy - vsep * std::cos(theta), va, vb,
                               brain.cos_t, brain.sin_t};
  const detail::Ellipse vent_b{cx - vsep * std::sin(theta), cy + vsep * std::cos(theta), va, vb,
                               brain.cos_t, brain.sin_t};

  const double amp = spec.texture_amplitude.draw(rng);
  struct Wave {
    double kx, ky, phase, weight;
  };
  std::vector<Wave> waves;
  for (int w = 0; w < 4; ++w) {
    const double freq = 0.5 + 1.5 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double dir = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const double weight = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
    const double k = 2.0 * std::numbers::pi * freq / spec.size;
    waves.push_back({k * std::cos(dir), k * std::sin(dir), phase, weight});
  }

  constexpr int kSub = 4;
  Image img(spec.size, spec.size);
  for (int r = 0; r < spec.size; ++r) {
    for (int c = 0; c < spec.size; ++c) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double x = c - 0.5 + (sx + 0.5) / kSub;
          const double y = r - 0.5 + (sy + 0.5) / kSub;
          const double rho = brain.rho(x, y);
          if (rho >= 1.0) continue;
          double v = 1.0 + rim * std::exp(-std::pow((1.0 - rho) / 0.12, 2.0));
          if (vent_a.rho(x, y) < 1.0 || vent_b.rho(x, y) < 1.0) v = 0.35;
          double field = 0.0;
          for (const auto& w : waves) field += w.weight * std::cos(w.kx * x + w.ky * y + w.phase);
          acc += v + amp * field / 4.0;
        }
      }
      img(r, c) = static_cast<float>(acc / (kSub * kSub));
    }
  }
  return img;
}

// Deterministic in spec.seed; image i depends only on (seed, i).
inline Dataset generate_healthy(const PhantomSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.split = Split::train;
  ds.images.reserve(static_cast<std::size_t>(spec.n_images));
  for (int i = 0; i < spec.n_images; ++i) ds.images.push_back(render_healthy_phantom(spec, static_cast<std::uint64_t>(i)));
  return ds;
}

struct InjectedAnomaly {
  Image image;
  Mask mask;
  int center_row = 0;
  int center_col = 0;
  int radius = 0;
  double offset = 0.0;
};

// Pixels (dr, dc) with dr^2 + dc^2 <= radius^2.
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> out;
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      if (dr * dr + dc * dc <= radius * radius) out.emplace_back(dr, dc);
    }
  }
  return out;
}

// Adds a bright disk inside the foreground. Foreground is every pixel whose value
// differs from the corner pixel (the background level). Pixels outside the returned
// mask are bitwise unchanged.
inline InjectedAnomaly inject_anomaly(const Image& image, const AnomalyParams& params, std::uint64_t seed) {
  if (!params.radius.valid() || params.radius.lo < 1.0 || !params.offset.valid()) {
    throw ConfigError("inject_anomaly: invalid anomaly parameters");
  }
  if (image.rows < 1 || image.cols < 1) throw ContractError("inject_anomaly: empty image");
  auto rng = detail::stream(seed, 0, 0x4c455349u);
  const int rmin = static_cast<int>(std::ceil(params.radius.lo));
  const int rmax = std::max(rmin, static_cast<int>(std::floor(params.radius.hi)));
  const int radius = std::uniform_int_distribution<int>(rmin, rmax)(rng);
  const double offset = params.offset.draw(rng);

  const float background = image(0, 0);
  const auto disk = disk_offsets(radius);
  std::vector<std::pair<int, int>> centers;
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      bool ok = true;
      for (auto [dr, dc] : disk) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= image.rows || cc >= image.cols || image(rr, cc) == background) {
          ok = false;
          break;
        }
      }
      if (ok) centers.emplace_back(r, c);
    }
  }
  if (centers.empty()) {
    throw PlacementError("inject_anomaly: foreground too small for a radius-" + std::to_string(radius) + " disk");
  }
  const auto [cr, cc] = centers[std::uniform_int_distribution<std::size_t>(0, centers.size() - 1)(rng)];

  InjectedAnomaly out{image, Mask(image.rows, image.cols), cr, cc, radius, offset};
  const double r2 = static_cast<double>(radius * radius);
  for (auto [dr, dc] : disk) {
    // Brightest at the center, half strength at the rim.
    const double profile = 1.0 - 0.5 * (dr * dr + dc * dc) / r2;
    out.image(cr + dr, cc + dc) = static_cast<float>(out.image(cr + dr, cc + dc) + offset * profile);
    out.mask(cr + dr, cc + dc) = 1;
  }
  return out;
}

struct PhantomBenchmark {
  Dataset train;
  Dataset test;
};

// Healthy train split standardized on itself; test split standardized with the
// train affine, then one anomaly per image. Test images use indices after the
// training ones so the two splits never share a phantom.
inline PhantomBenchmark make_phantom_benchmark(const PhantomSpec& spec, int n_train, int n_test) {
  if (n_train < 1 || n_test < 1) throw ConfigError("phantom benchmark: split sizes must be >= 1");
  PhantomSpec train_spec = spec;
  train_spec.n_images = n_train;
  train_spec.validate();
  PhantomBenchmark b;
  b.train = standardize(generate_healthy(train_spec));
  b.train.split = Split::train;

  Dataset test;
  test.split = Split::test;
  for (int i = 0; i < n_test; ++i) {
    test.images.push_back(render_healthy_phantom(spec, static_cast<std::uint64_t>(n_train + i)));
  }
  test = apply_standardization(std::move(test), *b.train.affine);
  for (int i = 0; i < n_test; ++i) {
    auto inj = inject_anomaly(test.images[static_cast<std::size_t>(i)], spec.anomaly,
                              spec.seed * 1000003ull + static_cast<std::uint64_t>(i));
    test.images[static_cast<std::size_t>(i)] = std::move(inj.image);
    test.masks.push_back(std::move(inj.mask));
  }
  b.test = std::move(test);
  return b;
}

}  // namespace lcae
