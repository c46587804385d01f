#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>

#include "lcae/io/archive.hpp"
#include "lcae/io/volume_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "lcae_cli";

const char* kTiny =
    " --set phantom.n_train=48 --set phantom.n_test=6 --set model.channels=[2,4] --set model.latent_dim=4"
    " --set model.critic_width=8 --set model.critic_depth=1 --set training.batch_size=16 --set training.epochs=1"
    " --set training.learning_rate=0.001 --set seed=3";

int run(const std::string& args, const std::string& log = "") {
  std::string cmd = std::string(LCAE_CLI_PATH) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>/dev/null" : " >/dev/null 2>" + log;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

// Shared tiny experiment: synth, then one trained model per kind.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    ASSERT_EQ(run("synth -o " + (kRoot / "data").string() + kTiny), 0);
    ASSERT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + (kRoot / "aae").string() + kTiny +
                  " --set training.lambda_lc=1.0"),
              0);
    ASSERT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + (kRoot / "vae").string() + kTiny +
                  " --set model.kind=vae"),
              0);
  }
};

}  // namespace

TEST_F(Cli, SynthArchivesAreDeterministicAndMasked) {
  ASSERT_EQ(run("synth -o " + (kRoot / "data2").string() + kTiny), 0);
  for (const char* split : {"train", "test"}) {
    for (const char* f : {"images.f32", "manifest.json"}) {
      EXPECT_EQ(slurp(kRoot / "data" / split / f), slurp(kRoot / "data2" / split / f)) << split << f;
    }
  }
  const auto train = read_json(kRoot / "data/train/manifest.json");
  const auto test = read_json(kRoot / "data/test/manifest.json");
  EXPECT_EQ(train["count"], 48);
  EXPECT_EQ(test["count"], 6);
  EXPECT_FALSE(train.contains("masks"));
  EXPECT_EQ(test["masks"].size(), 6u);
  EXPECT_TRUE(fs::exists(kRoot / "data/config.json"));
  EXPECT_EQ(read_json(kRoot / "data/config.json")["phantom"]["n_train"], 48);
}

TEST_F(Cli, TrainWritesCheckpointLogAndSnapshot) {
  for (const char* f : {"model.ckpt", "train_log.csv", "train_summary.json", "config.json"}) {
    EXPECT_TRUE(fs::exists(kRoot / "aae" / f)) << f;
  }
  EXPECT_EQ(read_json(kRoot / "aae/config.json")["training"]["lambda_lc"], 1.0);
  EXPECT_EQ(read_json(kRoot / "aae/train_summary.json")["steps"], 3);
}

TEST_F(Cli, TrainCheckpointCadence) {
  const fs::path out = kRoot / "cadence";
  ASSERT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + out.string() + kTiny +
                " --set training.epochs=3 --set training.checkpoint_every=2"),
            0);
  EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_0002.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_0003.ckpt"));
  EXPECT_FALSE(fs::exists(out / "checkpoints/epoch_0001.ckpt"));
}

TEST_F(Cli, TrainIsReproducible) {
  const fs::path out = kRoot / "aae_again";
  ASSERT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + out.string() + kTiny +
                " --set training.lambda_lc=1.0"),
            0);
  EXPECT_EQ(slurp(out / "model.ckpt"), slurp(kRoot / "aae/model.ckpt"));
  EXPECT_EQ(slurp(out / "train_log.csv"), slurp(kRoot / "aae/train_log.csv"));
}

TEST_F(Cli, VaeWarnsThatLambdaIsIgnored) {
  const fs::path log = kRoot / "vae_warn.log";
  ASSERT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + (kRoot / "vae_lambda").string() + kTiny +
                    " --set model.kind=vae --set training.lambda_lc=0.5",
                log.string()),
            0);
  EXPECT_NE(slurp(log).find("lambda_lc is ignored"), std::string::npos);
}

TEST_F(Cli, DivergenceExitsWithCodeThree) {
  const fs::path out = kRoot / "diverge";
  EXPECT_EQ(run("train -d " + (kRoot / "data/train").string() + " -o " + out.string() + kTiny +
                " --set model.kind=vae --set training.learning_rate=1e38 --set training.epochs=20"),
            3);
  EXPECT_TRUE(fs::exists(out / "last_good.ckpt"));
  EXPECT_TRUE(read_json(out / "train_summary.json")["extra"].contains("diverged"));
}

TEST_F(Cli, DetectWritesResidualsAndHeatmaps) {
  const fs::path out = kRoot / "detect";
  ASSERT_EQ(run("detect -k " + (kRoot / "aae/model.ckpt").string() + " -d " + (kRoot / "data/test").string() +
                " --heatmaps -o " + out.string()),
            0);
  EXPECT_EQ(fs::file_size(out / "residuals.f32"), 6u * 32u * 32u * 4u);
  EXPECT_EQ(count_files(out / "heatmaps", ".png"), 6u);
  EXPECT_EQ(read_json(out / "detect.json")["count"], 6);
}

TEST_F(Cli, EvaluateSingleAndMultiModel) {
  const fs::path one = kRoot / "eval_one";
  ASSERT_EQ(run("evaluate -k " + (kRoot / "aae/model.ckpt").string() + " -d " + (kRoot / "data/test").string() +
                " -o " + one.string()),
            0);
  const auto m = read_json(one / "metrics.json");
  for (const char* k : {"auc", "mu_h", "sigma_h", "mu_a", "sigma_a", "overlap_percent"}) EXPECT_TRUE(m.contains(k)) << k;
  EXPECT_EQ(count_files(one / "panels", ".png"), 6u);
  EXPECT_TRUE(fs::exists(one / "roc.csv"));
  EXPECT_TRUE(fs::exists(one / "histogram.csv"));
  EXPECT_TRUE(fs::exists(one / "config.json"));

  const fs::path multi = kRoot / "eval_multi";
  ASSERT_EQ(run("evaluate -k " + (kRoot / "aae/model.ckpt").string() + " -n aae -k " +
                (kRoot / "vae/model.ckpt").string() + " -n vae -d " + (kRoot / "data/test").string() + " -o " +
                multi.string()),
            0);
  EXPECT_TRUE(fs::exists(multi / "roc.png"));
  EXPECT_EQ(read_json(multi / "roc.png.json")["curves"].size(), 2u);
  EXPECT_TRUE(fs::exists(multi / "aae/metrics.json"));
  EXPECT_TRUE(fs::exists(multi / "vae/metrics.json"));
  EXPECT_EQ(read_json(multi / "models.json").size(), 2u);

  const fs::path again = kRoot / "eval_again";
  ASSERT_EQ(run("evaluate -k " + (kRoot / "aae/model.ckpt").string() + " -d " + (kRoot / "data/test").string() +
                " -o " + again.string()),
            0);
  for (const char* f : {"metrics.json", "roc.csv", "histogram.csv", "residuals.f32", "panels/panel_0003.png"}) {
    EXPECT_EQ(slurp(one / f), slurp(again / f)) << f;
  }

  const fs::path rep = kRoot / "report";
  ASSERT_EQ(run("report " + (multi / "aae").string() + " " + (multi / "vae").string() + " " + one.string() + " -o " +
                rep.string()),
            0);
  const auto r = read_json(rep / "report.json");
  EXPECT_EQ(r["runs"].size(), 3u);
  EXPECT_TRUE(fs::exists(rep / "report.csv"));
  EXPECT_TRUE(fs::exists(rep / "roc.png"));
}

TEST_F(Cli, EmbedRowCounts) {
  const fs::path out = kRoot / "embed";
  ASSERT_EQ(run("embed -k " + (kRoot / "aae/model.ckpt").string() + " --healthy " + (kRoot / "data/train").string() +
                " --anomalous " + (kRoot / "data/test").string() + " -o " + out.string() +
                " --set embedding.max_per_set=10 --set embedding.prior_samples=7 --set embedding.iterations=100"),
            0);
  const auto s = read_json(out / "embedding.json");
  EXPECT_EQ(s["rows"], 10 + 6 + 7);
  EXPECT_EQ(s["count_healthy"], 10);
  EXPECT_EQ(s["count_anomalous"], 6);
  EXPECT_TRUE(fs::exists(out / "embedding.png"));
  std::ifstream csv(out / "embedding.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 23);
}

TEST_F(Cli, PrepareFromVolumesIsDeterministic) {
  const fs::path dir = kRoot / "volumes";
  fs::create_directories(dir);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(100.0f, 10.0f);
  for (const char* name : {"a", "b", "t"}) {
    lcae::Volume v;
    v.dims = {64, 64, 4};
    v.subject_id = name;
    v.voxels.assign(64 * 64 * 4, 0.0f);
    for (int k = 0; k < 4; ++k)
      for (int j = 8; j < 56; ++j)
        for (int i = 8; i < 56; ++i) v.at(i, j, k) = std::max(1.0f, n(rng));
    lcae::io::save_nifti(v, dir / (std::string(name) + ".nii.gz"));
  }
  lcae::Volume mask;
  mask.dims = {64, 64, 4};
  mask.voxels.assign(64 * 64 * 4, 0.0f);
  for (int k = 0; k < 4; ++k)
    for (int j = 20; j < 28; ++j)
      for (int i = 20; i < 28; ++i) mask.at(i, j, k) = 1.0f;
  lcae::io::save_raw(mask, dir / "t_mask.raw");

  const std::string args = " --train " + (dir / "a.nii.gz").string() + " " + (dir / "b.nii.gz").string() +
                           " --test " + (dir / "t.nii.gz").string() + " --test-masks " + (dir / "t_mask.raw").string();
  ASSERT_EQ(run("prepare -o " + (kRoot / "prep1").string() + args), 0);
  ASSERT_EQ(run("prepare -o " + (kRoot / "prep2").string() + args), 0);
  for (const char* f : {"train/images.f32", "train/manifest.json", "test/images.f32", "test/manifest.json"}) {
    EXPECT_EQ(slurp(kRoot / "prep1" / f), slurp(kRoot / "prep2" / f)) << f;
  }
  const auto train = lcae::io::load_archive(kRoot / "prep1/train");
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(train.images[0].rows, 32);
  ASSERT_TRUE(train.affine && train.reference);
  const auto test = lcae::io::load_archive(kRoot / "prep1/test");
  ASSERT_TRUE(test.has_masks());
  EXPECT_EQ(test.masks[0].count(), 16u);

  EXPECT_EQ(run("prepare -o " + (kRoot / "prep3").string() + " --train " + (dir / "missing.nii").string()), 2);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("fly"), 1);
  EXPECT_EQ(run("train"), 1);
  EXPECT_EQ(run("synth -o " + (kRoot / "bad").string() + " --set training.lamda=1"), 1);
  EXPECT_EQ(run("synth -o " + (kRoot / "bad").string() + " --set training.epochs=0"), 1);
  EXPECT_EQ(run("synth -c " + (kRoot / "nope.json").string()), 1);
  EXPECT_EQ(run("train -d " + (kRoot / "nowhere").string() + " -o " + (kRoot / "bad").string()), 2);
  EXPECT_EQ(run("evaluate -k " + (kRoot / "aae/model.ckpt").string() + " -d " + (kRoot / "data/train").string() +
                " -o " + (kRoot / "bad").string()),
            2);
  EXPECT_EQ(run("evaluate -k " + (kRoot / "aae/model.ckpt").string() + " -d " + (kRoot / "data/test").string() +
                " -n a -n b -o " + (kRoot / "bad").string()),
            1);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, ConfigFileAndOutputRoot) {
  const fs::path cfg = kRoot / "exp.json";
  std::ofstream(cfg) << R"({"output_dir": "rooted", "phantom": {"n_train": 5, "n_test": 2}})";
  const std::string env = "LCAE_OUTPUT_ROOT=" + (kRoot / "root").string() + " ";
  const int status = std::system((env + LCAE_CLI_PATH + " synth -c " + cfg.string() + " 2>/dev/null").c_str());
  ASSERT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(read_json(kRoot / "root/rooted/train/manifest.json")["count"], 5);
  ASSERT_EQ(run("synth -c " + cfg.string() + " --set phantom.n_train=4 -o " + (kRoot / "flag").string()), 0);
  EXPECT_EQ(read_json(kRoot / "flag/train/manifest.json")["count"], 4);
}
