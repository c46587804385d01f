#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lcae/evaluation.hpp"
#include "lcae/model.hpp"
#include "lcae/tsne.hpp"

namespace lcae {

enum class LatentLabel { healthy, anomalous, prior };

inline std::string to_string(LatentLabel l) {
  switch (l) {
    case LatentLabel::healthy: return "healthy";
    case LatentLabel::anomalous: return "anomalous";
    case LatentLabel::prior: return "prior";
  }
  return "?";
}

struct EmbeddingTable {
  std::vector<LatentLabel> labels;
  std::vector<std::vector<double>> latents;
  std::vector<Point2> projection;

  std::size_t size() const noexcept { return labels.size(); }
  double mean_norm(LatentLabel l) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != l) continue;
      double q = 0.0;
      for (double v : latents[i]) q += v * v;
      s += std::sqrt(q);
      ++n;
    }
    if (n == 0) throw UndefinedMetricError("mean_norm: no rows with label " + to_string(l));
    return s / static_cast<double>(n);
  }
};

// Healthy codes, then anomalous codes, then standard-normal prior samples drawn
// from `seed`. VAE rows are posterior means.
template <class T>
EmbeddingTable export_latents(const Model<T>& m, std::span<const Image> healthy, std::span<const Image> anomalous,
                              std::size_t prior_samples, const TsneOptions& opt = {}) {
  EmbeddingTable t;
  const auto add = [&](std::span<const Image> images, LatentLabel label) {
    for (const auto& im : images) {
      detail::check_input(m, im);
      const Matrix<T> z = encode_codes(m, std::span<const Image>(&im, 1));
      std::vector<double> row(static_cast<std::size_t>(z.cols()));
      for (Eigen::Index k = 0; k < z.cols(); ++k) row[static_cast<std::size_t>(k)] = static_cast<double>(z(0, k));
      t.latents.push_back(std::move(row));
      t.labels.push_back(label);
    }
  };
  add(healthy, LatentLabel::healthy);
  add(anomalous, LatentLabel::anomalous);
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < prior_samples; ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.latent_dim()));
    for (double& v : row) v = normal(rng);
    t.latents.push_back(std::move(row));
    t.labels.push_back(LatentLabel::prior);
  }
  t.projection = tsne(t.latents, opt);
  return t;
}

inline void write_embedding_csv(const EmbeddingTable& t, const std::filesystem::path& path, bool include_latents = true) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "label,x,y";
  const std::size_t dz = t.latents.empty() ? 0 : t.latents.front().size();
  if (include_latents) {
    for (std::size_t k = 0; k < dz; ++k) out << ",z" << k;
  }
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << to_string(t.labels[i]) << ',' << fmt17(t.projection[i][0]) << ',' << fmt17(t.projection[i][1]);
    if (include_latents) {
      for (double v : t.latents[i]) out << ',' << fmt17(v);
    }
    out << '\n';
  }
}

}  // namespace lcae
