#include <gtest/gtest.h>

#include <set>

#include "lcae/phantom.hpp"
#include "oracles.hpp"

using namespace lcae;

namespace {

PhantomSpec small_spec(int n = 8) {
  PhantomSpec s;
  s.seed = 11;
  s.n_images = n;
  return s;
}

}  // namespace

TEST(Phantom, SameSpecIsBitwiseIdentical) {
  auto a = generate_healthy(small_spec());
  auto b = generate_healthy(small_spec());
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.images[i], b.images[i]);
  EXPECT_FALSE(a.has_masks());
}

TEST(Phantom, ImagesAre32x32WithZeroBackground) {
  auto ds = generate_healthy(small_spec(4));
  for (const auto& im : ds.images) {
    EXPECT_EQ(im.rows, 32);
    EXPECT_EQ(im.cols, 32);
    EXPECT_EQ(im(0, 0), 0.0f);
    EXPECT_EQ(im(31, 31), 0.0f);
    EXPECT_GT(im(16, 16), 0.0f);
  }
}

TEST(Phantom, NoVariationGivesIdenticalImages) {
  PhantomSpec s = small_spec(5);
  for (Range* r : {&s.semi_major, &s.semi_minor, &s.orientation, &s.center_shift, &s.slice_level,
                   &s.texture_amplitude, &s.rim_contrast}) {
    r->hi = r->lo;
  }
  s.texture_amplitude = {0.0, 0.0};
  auto ds = generate_healthy(s);
  for (std::size_t i = 1; i < ds.size(); ++i) EXPECT_EQ(ds.images[i], ds.images[0]);
}

TEST(Phantom, HundredImagesAreDistinct) {
  auto ds = generate_healthy(small_spec(100));
  std::set<std::vector<float>> seen;
  for (const auto& im : ds.images) seen.insert(im.pixels);
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Phantom, ImageDependsOnlyOnSeedAndIndex) {
  auto few = generate_healthy(small_spec(3));
  auto many = generate_healthy(small_spec(10));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(few.images[i], many.images[i]);
}

TEST(Phantom, SpecValidation) {
  PhantomSpec s = small_spec();
  s.n_images = 0;
  EXPECT_THROW(generate_healthy(s), ConfigError);
  s = small_spec();
  s.anomaly.radius = {0.5, 2.0};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.semi_major = {3.0, 2.0};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Inject, DiskOffsetsMatchBruteForce) {
  for (int r = 1; r <= 6; ++r) EXPECT_EQ(disk_offsets(r).size(), oracle::disk_size(r)) << r;
  EXPECT_EQ(oracle::disk_size(2), 13u);
}

TEST(Inject, RadiusTwoMaskHasThirteenPixels) {
  const Image im = generate_healthy(small_spec(1)).images[0];
  AnomalyParams p{{2.0, 2.0}, {1.0, 1.0}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inj = inject_anomaly(im, p, seed);
    EXPECT_EQ(inj.radius, 2);
    EXPECT_EQ(inj.mask.count(), 13u);
  }
}

TEST(Inject, OutsideMaskUnchangedAndMaskEqualsChangedSet) {
  const auto ds = generate_healthy(small_spec(6));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto inj = inject_anomaly(ds.images[i], AnomalyParams{}, 100 + i);
    for (std::size_t k = 0; k < inj.image.size(); ++k) {
      const bool changed = inj.image.pixels[k] != ds.images[i].pixels[k];
      EXPECT_EQ(changed, inj.mask.bits[k] == 1) << k;
    }
    EXPECT_EQ(inj.mask.count(), oracle::disk_size(inj.radius));
  }
}

TEST(Inject, ZeroOffsetKeepsImageButRecordsRegion) {
  const Image im = generate_healthy(small_spec(1)).images[0];
  auto inj = inject_anomaly(im, AnomalyParams{{3.0, 3.0}, {0.0, 0.0}}, 4);
  EXPECT_EQ(inj.image, im);
  EXPECT_EQ(inj.mask.count(), oracle::disk_size(3));
}

TEST(Inject, BlobLiesInsideForeground) {
  const Image im = generate_healthy(small_spec(1)).images[0];
  auto inj = inject_anomaly(im, AnomalyParams{}, 9);
  for (std::size_t k = 0; k < im.size(); ++k) {
    if (inj.mask.bits[k]) {
      EXPECT_NE(im.pixels[k], 0.0f);
    }
  }
}

TEST(Inject, Deterministic) {
  const Image im = generate_healthy(small_spec(1)).images[0];
  auto a = inject_anomaly(im, AnomalyParams{}, 21);
  auto b = inject_anomaly(im, AnomalyParams{}, 21);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(Inject, TinyForegroundIsAPlacementError) {
  Image im(32, 32);
  im(10, 10) = 1.0f;
  im(10, 11) = 1.0f;
  EXPECT_THROW(inject_anomaly(im, AnomalyParams{}, 1), PlacementError);
  EXPECT_THROW(inject_anomaly(im, AnomalyParams{{0.0, 1.0}, {1.0, 1.0}}, 1), ConfigError);
}

TEST(Benchmark, SplitsAreStandardizedAndMasked) {
  PhantomSpec s = small_spec();
  auto b = make_phantom_benchmark(s, 50, 10);
  ASSERT_EQ(b.train.size(), 50u);
  ASSERT_EQ(b.test.size(), 10u);
  EXPECT_FALSE(b.train.has_masks());
  ASSERT_TRUE(b.test.has_masks());
  b.test.validate();

  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& im : b.train.images)
    for (float p : im.pixels) {
      sum += p;
      sq += static_cast<double>(p) * p;
      ++n;
    }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 1e-3);
  ASSERT_TRUE(b.test.affine.has_value());
  EXPECT_EQ(b.test.affine->mean, b.train.affine->mean);
  for (const auto& m : b.test.masks) EXPECT_GT(m.count(), 0u);
}

TEST(Benchmark, Deterministic) {
  auto a = make_phantom_benchmark(small_spec(), 20, 5);
  auto b = make_phantom_benchmark(small_spec(), 20, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.test.images[i], b.test.images[i]);
    EXPECT_EQ(a.test.masks[i], b.test.masks[i]);
  }
}
