#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "lcae/io/archive.hpp"
#include "lcae/phantom.hpp"

using namespace lcae;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "lcae_archive" / name;
  fs::remove_all(d);
  return d;
}

Dataset sample(bool masks) {
  PhantomSpec s;
  s.seed = 3;
  auto b = make_phantom_benchmark(s, 6, 4);
  if (!masks) return b.train;
  b.test.reference = QuantileTable{};
  for (std::size_t i = 0; i < 11; ++i) b.test.reference->values[i] = 0.1 * static_cast<double>(i);
  return b.test;
}

}  // namespace

TEST(Archive, RoundTripWithoutMasks) {
  const Dataset d = sample(false);
  const auto dir = fresh_dir("healthy");
  io::save_archive(d, dir, {{"source", "phantom"}});
  const Dataset got = io::load_archive(dir);
  EXPECT_EQ(got.images, d.images);
  EXPECT_FALSE(got.has_masks());
  EXPECT_EQ(got.split, Split::train);
  ASSERT_TRUE(got.affine);
  EXPECT_EQ(got.affine->mean, d.affine->mean);
  EXPECT_EQ(got.affine->std, d.affine->std);
  EXPECT_FALSE(got.reference);
  EXPECT_EQ(fs::file_size(dir / "images.f32"), d.size() * 32 * 32 * 4);
  const auto m = io::read_manifest(dir);
  EXPECT_EQ(m["count"], 6);
  EXPECT_EQ(m["provenance"]["source"], "phantom");
}

TEST(Archive, RoundTripWithMasksAndReference) {
  const Dataset d = sample(true);
  const auto dir = fresh_dir("lesion");
  io::save_archive(d, dir);
  const Dataset got = io::load_archive(dir);
  EXPECT_EQ(got.images, d.images);
  EXPECT_EQ(got.masks, d.masks);
  EXPECT_EQ(got.split, Split::test);
  ASSERT_TRUE(got.reference);
  EXPECT_EQ(got.reference->values, d.reference->values);
}

TEST(Archive, RecordsAreRowMajorFloat32) {
  Dataset d;
  Image im(2, 3);
  im.pixels = {1, 2, 3, 4, 5, 6};
  d.images = {im};
  const auto dir = fresh_dir("layout");
  io::save_archive(d, dir);
  const auto raw = io::read_f32_file(dir / "images.f32");
  EXPECT_EQ(raw, im.pixels);
}

TEST(Archive, RejectsInconsistentManifests) {
  const Dataset d = sample(true);
  const auto dir = fresh_dir("broken");
  io::save_archive(d, dir);
  auto m = io::read_manifest(dir);

  auto rewrite = [&](const nlohmann::json& j) { std::ofstream(dir / "manifest.json") << j.dump(); };
  auto bad = m;
  bad["count"] = 5;
  rewrite(bad);
  EXPECT_THROW(io::load_archive(dir), IngestionError);
  bad = m;
  bad["format_version"] = 9;
  rewrite(bad);
  EXPECT_THROW(io::load_archive(dir), IngestionError);
  bad = m;
  bad["masks"][0] = {5000};
  rewrite(bad);
  EXPECT_THROW(io::load_archive(dir), IngestionError);
  bad = m;
  bad.erase("rows");
  rewrite(bad);
  EXPECT_THROW(io::load_archive(dir), IngestionError);
  std::ofstream(dir / "manifest.json") << "[1,";
  EXPECT_THROW(io::load_archive(dir), IngestionError);
  EXPECT_THROW(io::load_archive(fresh_dir("none")), IngestionError);
}

TEST(Archive, NonFiniteRecordsAreRejected) {
  Dataset d;
  d.images = {Image(2, 2, 1.0f)};
  d.images[0].pixels[3] = std::numeric_limits<float>::infinity();
  const auto dir = fresh_dir("inf");
  io::save_archive(d, dir);
  EXPECT_THROW(io::load_archive(dir), DataIntegrityError);
}

TEST(Archive, MisalignedMasksAreAContractError) {
  Dataset d;
  d.images = {Image(4, 4), Image(4, 4)};
  d.masks = {Mask(4, 4)};
  EXPECT_THROW(io::save_archive(d, fresh_dir("mis")), ContractError);
  d.masks.push_back(Mask(4, 4));
  d.masks[1].bits[0] = 2;
  EXPECT_THROW(io::save_archive(d, fresh_dir("mis")), ContractError);
  d.masks[1] = Mask(3, 4);
  EXPECT_THROW(io::save_archive(d, fresh_dir("mis")), ContractError);
}
