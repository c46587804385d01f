#pragma once

// Evaluation bundles: metrics JSON, ROC and histogram CSVs, residual records and
// per-image panels for one model, plus cross-model summaries.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lcae/detection.hpp"
#include "lcae/evaluation.hpp"
#include "lcae/io/archive.hpp"
#include "lcae/io/png.hpp"

namespace lcae {

struct EvaluationOptions {
  IntervalKind interval = IntervalKind::percentile;
  int histogram_bins = 50;
  bool panels = true;
  int max_panels = -1;  // -1 writes one panel per test image
};

struct EvaluationSummary {
  std::string name;
  RocResult roc;
  ErrorDistributions distributions;
  ResidualContrast contrast;

  nlohmann::json metrics(IntervalKind kind) const {
    auto j = metrics_json(roc, distributions, kind);
    j["name"] = name;
    j["residual_inside_mask"] = contrast.inside;
    j["residual_outside_mask"] = contrast.outside;
    return j;
  }
};

inline EvaluationSummary summarize(const std::string& name, const std::vector<Detection>& detections,
                                   std::span<const Mask> masks, const EvaluationOptions& opt = {}) {
  std::vector<ResidualMap> residuals;
  residuals.reserve(detections.size());
  for (const auto& d : detections) residuals.push_back(d.residual);
  const std::span<const ResidualMap> r(residuals);
  return {name, roc_auc(r, masks), error_distributions(r, masks, opt.histogram_bins, opt.interval),
          residual_contrast(r, masks)};
}

inline std::string panel_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "panel_%04zu.png", i);
  return buf;
}

// Writes metrics.json, roc.csv, histogram.csv, residuals.f32, reconstructions.f32
// and panels/panel_NNNN.png into `dir`.
inline void write_evaluation_bundle(const EvaluationSummary& s, const std::vector<Detection>& detections,
                                    std::span<const Mask> masks, const std::filesystem::path& dir,
                                    const EvaluationOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  io::write_json(s.metrics(opt.interval), dir / "metrics.json");
  write_roc_csv(s.roc, dir / "roc.csv");
  write_histogram_csv(s.distributions, dir / "histogram.csv");
  std::vector<std::vector<float>> res, rec;
  for (const auto& d : detections) {
    res.push_back(d.residual.scores);
    rec.push_back(d.reconstruction.pixels);
  }
  io::write_f32_records(dir / "residuals.f32", res);
  io::write_f32_records(dir / "reconstructions.f32", rec);
  if (opt.panels) {
    std::filesystem::remove_all(dir / "panels");
    const std::size_t n = opt.max_panels < 0 ? detections.size()
                                              : std::min(detections.size(), static_cast<std::size_t>(opt.max_panels));
    for (std::size_t i = 0; i < n; ++i) io::write_panel(detections[i], masks[i], dir / "panels" / panel_name(i));
  }
}

// Mean and population standard deviation of each metric over the runs that share
// a model name (e.g. several seeds).
inline nlohmann::json aggregate_metrics(const std::vector<nlohmann::json>& runs) {
  static const char* keys[] = {"auc", "mu_h", "sigma_h", "mu_a", "sigma_a", "overlap_percent",
                               "residual_inside_mask", "residual_outside_mask"};
  std::map<std::string, std::vector<const nlohmann::json*>> groups;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    const std::string name = r.value("name", std::string("model"));
    if (!groups.count(name)) order.push_back(name);
    groups[name].push_back(&r);
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& name : order) {
    const auto& g = groups[name];
    nlohmann::json row{{"name", name}, {"runs", g.size()}};
    for (const char* k : keys) {
      if (!g.front()->contains(k)) continue;
      double s = 0.0, ss = 0.0;
      for (const auto* r : g) s += r->at(k).get<double>();
      const double mean = s / static_cast<double>(g.size());
      for (const auto* r : g) ss += std::pow(r->at(k).get<double>() - mean, 2.0);
      row[k] = {{"mean", mean}, {"std", std::sqrt(ss / static_cast<double>(g.size()))}};
    }
    out.push_back(row);
  }
  return out;
}

inline void write_summary_table(const nlohmann::json& aggregated, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "name,runs,auc_mean,auc_std,overlap_mean,overlap_std,mu_h,sigma_h,mu_a,sigma_a\n";
  for (const auto& r : aggregated) {
    const auto m = [&](const char* k, const char* f) { return fmt17(r.at(k).at(f).get<double>()); };
    out << r.at("name").get<std::string>() << ',' << r.at("runs").get<int>() << ',' << m("auc", "mean") << ','
        << m("auc", "std") << ',' << m("overlap_percent", "mean") << ',' << m("overlap_percent", "std") << ','
        << m("mu_h", "mean") << ',' << m("sigma_h", "mean") << ',' << m("mu_a", "mean") << ','
        << m("sigma_a", "mean") << '\n';
  }
}

}  // namespace lcae
