#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lcae/lcae.hpp"

namespace fs = std::filesystem;
using namespace lcae;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set training.lambda_lc=0.5");
  cmd->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(c.config);
  for (const auto& s : c.overrides) cfg.set(s);
  if (!c.out.empty()) cfg.set("output_dir=" + nlohmann::json(c.out).dump());
  return cfg;
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  const fs::path out = cfg.output_dir();
  fs::create_directories(out);
  cfg.write_snapshot(out);
  return out;
}

void log(const std::string& msg) { std::cerr << "lcae: " << msg << '\n'; }

int cmd_synth(const Common& c) {
  const auto cfg = resolve(c);
  const fs::path out = prepare_output(cfg);
  const auto spec = cfg.phantom();
  const int n_test = cfg.at("phantom.n_test").get<int>();
  const auto bench = make_phantom_benchmark(spec, spec.n_images, n_test);
  const nlohmann::json prov{{"source", "phantom"}, {"seed", cfg.seed()}, {"phantom", cfg.at("phantom")}};
  io::save_archive(bench.train, out / "train", prov);
  io::save_archive(bench.test, out / "test", prov);
  log("wrote " + std::to_string(bench.train.size()) + " train and " + std::to_string(bench.test.size()) +
      " test images to " + out.string());
  return 0;
}

std::vector<Volume> load_all(const std::vector<std::string>& paths) {
  std::vector<Volume> v;
  for (const auto& p : paths) {
    try {
      v.push_back(io::load_volume(p));
    } catch (const DataIntegrityError& e) {
      throw DataIntegrityError(p + ": " + e.what(), e.bad_count());
    } catch (const Error& e) {
      throw IngestionError(p + ": " + e.what());
    }
  }
  return v;
}

int cmd_prepare(Common c, std::vector<std::string> train, std::vector<std::string> test,
                std::vector<std::string> masks) {
  auto cfg = resolve(c);
  if (!train.empty()) cfg.set("volumes.train=" + nlohmann::json(train).dump());
  if (!test.empty()) cfg.set("volumes.test=" + nlohmann::json(test).dump());
  if (!masks.empty()) cfg.set("volumes.test_masks=" + nlohmann::json(masks).dump());
  const fs::path out = prepare_output(cfg);
  PrepareOptions opt;
  opt.axis = cfg.at("preprocess.axis").get<int>();
  if (const auto& r = cfg.at("preprocess.slice_range"); !r.is_null()) opt.slice_range = {r[0].get<int>(), r[1].get<int>()};
  opt.min_foreground = cfg.at("preprocess.min_foreground").get<double>();
  opt.image_size = cfg.at("preprocess.image_size").get<int>();
  opt.histogram_normalize = cfg.at("preprocess.histogram_normalize").get<bool>();
  opt.nonzero_statistics = cfg.at("preprocess.nonzero_statistics").get<bool>();
  const auto tv = load_all(cfg.at("volumes.train").get<std::vector<std::string>>());
  const auto sv = load_all(cfg.at("volumes.test").get<std::vector<std::string>>());
  const auto mv = load_all(cfg.at("volumes.test_masks").get<std::vector<std::string>>());
  const auto data = prepare_datasets(tv, sv, mv, opt);
  const nlohmann::json prov{{"source", "volumes"}, {"volumes", cfg.at("volumes")}, {"preprocess", cfg.at("preprocess")}};
  io::save_archive(data.train, out / "train", prov);
  if (!data.test.empty()) io::save_archive(data.test, out / "test", prov);
  log("wrote " + std::to_string(data.train.size()) + " train and " + std::to_string(data.test.size()) +
      " test slices to " + out.string());
  return 0;
}

std::string epoch_file(int epoch) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch + 1);
  return buf;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  const auto cfg = resolve(c);
  const auto tc = cfg.train_config();
  if (tc.kind == ModelKind::vae && tc.hyper.lambda_lc != 0.0) {
    log("warning: training.lambda_lc is ignored for model kind vae");
  }
  const fs::path out = prepare_output(cfg);
  const Dataset data = io::load_archive(data_dir);
  if (data.split != Split::train) log("warning: " + data_dir + " is not a train split");
  const nlohmann::json meta{{"seed", tc.seed}, {"epochs", tc.epochs}, {"data", data_dir}};
  auto on_epoch = [&](int epoch, const Model<float>& m, const TrainLog& lg) {
    auto mm = meta;
    mm["epoch"] = epoch + 1;
    save_checkpoint(m, tc.hyper, out / "checkpoints" / epoch_file(epoch), mm);
    write_train_log(lg, out);
    log("epoch " + std::to_string(epoch + 1) + " checkpointed");
  };
  try {
    const auto res = train<float>(tc, data, on_epoch);
    auto mm = meta;
    mm["epoch"] = tc.epochs;
    save_checkpoint(res.model, tc.hyper, out / "model.ckpt", mm);
    write_train_log(res.log, out, {{"kind", to_string(tc.kind)}, {"seed", tc.seed}});
    log("trained " + to_string(tc.kind) + " for " + std::to_string(tc.epochs) + " epochs in " +
        std::to_string(res.log.wall_seconds) + " s");
  } catch (const TrainingDiverged<float>& e) {
    auto mm = meta;
    mm["epoch"] = e.epoch;
    mm["diverged"] = e.what();
    save_checkpoint(e.last_good, tc.hyper, out / "last_good.ckpt", mm);
    write_train_log(e.log, out, {{"diverged", e.what()}, {"epoch", e.epoch}});
    throw;
  }
  return 0;
}

int cmd_detect(const Common& c, const std::string& checkpoint, const std::string& data_dir, bool heatmaps) {
  const auto cfg = resolve(c);
  const fs::path out = prepare_output(cfg);
  const auto ck = load_checkpoint<float>(checkpoint);
  const Dataset data = io::load_archive(data_dir);
  const auto det = detect(ck.model, data);
  std::vector<std::vector<float>> res, rec;
  for (const auto& d : det) {
    res.push_back(d.residual.scores);
    rec.push_back(d.reconstruction.pixels);
  }
  io::write_f32_records(out / "residuals.f32", res);
  io::write_f32_records(out / "reconstructions.f32", rec);
  if (heatmaps) {
    fs::remove_all(out / "heatmaps");
    for (std::size_t i = 0; i < det.size(); ++i) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "heatmap_%04zu.png", i);
      io::write_heatmap(det[i].residual, out / "heatmaps" / buf);
    }
  }
  io::write_json({{"count", det.size()},
                  {"rows", det.empty() ? 0 : det.front().residual.rows},
                  {"cols", det.empty() ? 0 : det.front().residual.cols},
                  {"checkpoint", checkpoint},
                  {"data", data_dir}},
                 out / "detect.json");
  log("wrote " + std::to_string(det.size()) + " residual maps to " + out.string());
  return 0;
}

EvaluationOptions evaluation_options(const ExperimentConfig& cfg) {
  EvaluationOptions o;
  o.interval = cfg.interval();
  o.histogram_bins = cfg.at("evaluation.histogram_bins").get<int>();
  o.panels = cfg.at("evaluation.panels").get<bool>();
  o.max_panels = cfg.at("evaluation.max_panels").get<int>();
  return o;
}

std::string default_name(const std::string& checkpoint) {
  const fs::path p = fs::absolute(checkpoint);
  return p.has_parent_path() ? p.parent_path().filename().string() : p.stem().string();
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& checkpoints, std::vector<std::string> names,
                 const std::string& data_dir) {
  const auto cfg = resolve(c);
  if (!names.empty() && names.size() != checkpoints.size()) throw ConfigError("--name must be given once per --checkpoint");
  const fs::path out = prepare_output(cfg);
  const auto opt = evaluation_options(cfg);
  const Dataset data = io::load_archive(data_dir);
  if (!data.has_masks()) throw DataIntegrityError(data_dir + ": evaluation needs ground-truth masks", data.size());
  std::vector<std::pair<std::string, RocResult>> curves;
  std::vector<nlohmann::json> metrics;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const std::string name = names.empty() ? default_name(checkpoints[i]) : names[i];
    const auto ck = load_checkpoint<float>(checkpoints[i]);
    const auto det = detect(ck.model, data);
    const auto s = summarize(name, det, data.masks, opt);
    const fs::path dir = checkpoints.size() == 1 ? out : out / name;
    write_evaluation_bundle(s, det, data.masks, dir, opt);
    curves.emplace_back(name, s.roc);
    metrics.push_back(s.metrics(opt.interval));
    log(name + ": auc " + fmt17(s.roc.auc) + ", overlap " + fmt17(s.distributions.overlap_percent) + "%");
  }
  io::write_roc_plot(curves, out / "roc.png");
  if (checkpoints.size() > 1) io::write_json(metrics, out / "models.json");
  return 0;
}

std::vector<Image> head(const Dataset& d, int max) {
  const std::size_t n = max < 0 ? d.size() : std::min(d.size(), static_cast<std::size_t>(max));
  return {d.images.begin(), d.images.begin() + static_cast<std::ptrdiff_t>(n)};
}

int cmd_embed(const Common& c, const std::string& checkpoint, const std::string& healthy_dir,
              const std::string& anomalous_dir) {
  const auto cfg = resolve(c);
  const fs::path out = prepare_output(cfg);
  const auto ck = load_checkpoint<float>(checkpoint);
  const int max = cfg.at("embedding.max_per_set").get<int>();
  const auto healthy = head(io::load_archive(healthy_dir), max);
  const auto anomalous = head(io::load_archive(anomalous_dir), max);
  const auto table = export_latents(ck.model, healthy, anomalous,
                                    static_cast<std::size_t>(cfg.at("embedding.prior_samples").get<int>()),
                                    cfg.tsne_options());
  write_embedding_csv(table, out / "embedding.csv");
  io::write_embedding_scatter(table, out / "embedding.png");
  nlohmann::json summary{{"rows", table.size()}};
  for (auto l : {LatentLabel::healthy, LatentLabel::anomalous, LatentLabel::prior}) {
    const auto n = static_cast<std::size_t>(std::count(table.labels.begin(), table.labels.end(), l));
    summary["count_" + to_string(l)] = n;
    if (n) summary["mean_norm_" + to_string(l)] = table.mean_norm(l);
  }
  io::write_json(summary, out / "embedding.json");
  log("wrote " + std::to_string(table.size()) + " embedded points to " + out.string());
  return 0;
}

RocResult read_roc_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  RocResult r;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw IngestionError(path.string() + ": malformed row");
    r.fpr.push_back(std::stod(line.substr(0, a)));
    r.tpr.push_back(std::stod(line.substr(a + 1, b - a - 1)));
    r.thresholds.push_back(std::stod(line.substr(b + 1)));
  }
  return r;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  const auto cfg = resolve(c);
  const fs::path out = prepare_output(cfg);
  std::vector<nlohmann::json> metrics;
  std::vector<std::pair<std::string, RocResult>> curves;
  for (const auto& dir : runs) {
    std::vector<fs::path> found;
    if (fs::exists(fs::path(dir) / "metrics.json")) found.push_back(fs::path(dir) / "metrics.json");
    else {
      for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.path().filename() == "metrics.json") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
    }
    if (found.empty()) throw IngestionError(dir + ": no metrics.json found");
    for (const auto& f : found) {
      std::ifstream in(f);
      metrics.push_back(nlohmann::json::parse(in));
      auto roc = read_roc_csv(f.parent_path() / "roc.csv");
      roc.auc = metrics.back().at("auc").get<double>();
      curves.emplace_back(metrics.back().value("name", f.parent_path().filename().string()), std::move(roc));
    }
  }
  const auto agg = aggregate_metrics(metrics);
  io::write_json({{"runs", metrics}, {"models", agg}}, out / "report.json");
  write_summary_table(agg, out / "report.csv");
  io::write_roc_plot(curves, out / "roc.png");
  for (const auto& row : agg) {
    log(row.at("name").get<std::string>() + ": auc " + fmt17(row.at("auc").at("mean").get<double>()) + " over " +
        std::to_string(row.at("runs").get<int>()) + " run(s)");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Latent-consistency auto-encoders for unsupervised lesion detection"};
  app.require_subcommand(1);

  Common synth_c, prep_c, train_c, detect_c, eval_c, embed_c, report_c;
  std::vector<std::string> prep_train, prep_test, prep_masks, eval_ckpts, eval_names, report_runs;
  std::string train_data, detect_ckpt, detect_data, eval_data, embed_ckpt, embed_healthy, embed_anomalous;
  bool heatmaps = false;

  auto* synth = app.add_subcommand("synth", "generate phantom train/test archives");
  add_common(synth, synth_c);

  auto* prep = app.add_subcommand("prepare", "build archives from NIfTI or raw volumes");
  add_common(prep, prep_c);
  prep->add_option("--train", prep_train, "training volumes");
  prep->add_option("--test", prep_test, "test volumes");
  prep->add_option("--test-masks", prep_masks, "lesion mask volumes, one per test volume");

  auto* tr = app.add_subcommand("train", "train a VAE or AAE on a train archive");
  add_common(tr, train_c);
  tr->add_option("-d,--data", train_data, "train archive directory")->required();

  auto* det = app.add_subcommand("detect", "write residual maps for an archive");
  add_common(det, detect_c);
  det->add_option("-k,--checkpoint", detect_ckpt, "model checkpoint")->required();
  det->add_option("-d,--data", detect_data, "archive directory")->required();
  det->add_flag("--heatmaps", heatmaps, "also write PNG heat maps");

  auto* ev = app.add_subcommand("evaluate", "ROC, error distributions and panels for one or more models");
  add_common(ev, eval_c);
  ev->add_option("-k,--checkpoint", eval_ckpts, "model checkpoint (repeatable)")->required();
  ev->add_option("-n,--name", eval_names, "model name, one per checkpoint");
  ev->add_option("-d,--data", eval_data, "test archive with masks")->required();

  auto* em = app.add_subcommand("embed", "latent codes and a 2-D embedding of healthy, anomalous and prior points");
  add_common(em, embed_c);
  em->add_option("-k,--checkpoint", embed_ckpt, "model checkpoint")->required();
  em->add_option("--healthy", embed_healthy, "healthy archive")->required();
  em->add_option("--anomalous", embed_anomalous, "anomalous archive")->required();

  auto* rep = app.add_subcommand("report", "aggregate evaluation outputs across models and seeds");
  add_common(rep, report_c);
  rep->add_option("runs", report_runs, "evaluation output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*prep) return cmd_prepare(prep_c, prep_train, prep_test, prep_masks);
    if (*tr) return cmd_train(train_c, train_data);
    if (*det) return cmd_detect(detect_c, detect_ckpt, detect_data, heatmaps);
    if (*ev) return cmd_evaluate(eval_c, eval_ckpts, eval_names, eval_data);
    if (*em) return cmd_embed(embed_c, embed_ckpt, embed_healthy, embed_anomalous);
    if (*rep) return cmd_report(report_c, report_runs);
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(e.exit_code());
  } catch (const nlohmann::json::exception& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(ExitCode::data);
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::usage);
}
