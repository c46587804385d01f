#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lcae/detection.hpp"
#include "lcae/image.hpp"

namespace lcae {

struct RocResult {
  std::vector<double> thresholds;  // descending, starting at +inf
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
};

// Pixel-wise ROC over every distinct score. A pixel is called positive at
// threshold t when score >= t. The area is accumulated as an integer (twice the
// number of correctly ordered positive/negative pairs plus ties), so the AUC is
// exactly the Mann-Whitney statistic.
inline RocResult roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ContractError("roc_auc: scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw ContractError("roc_auc: NaN score");
  }
  std::uint64_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("roc_auc: labels contain a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.positives = pos;
  r.negatives = neg;
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.tpr.push_back(0.0);
  r.fpr.push_back(0.0);
  unsigned __int128 twice_area = 0;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::uint64_t p = 0, q = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? p : q) += 1;
    twice_area += static_cast<unsigned __int128>(q) * (2 * tp + p);
    tp += p;
    fp += q;
    r.thresholds.push_back(s);
    r.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    r.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
  }
  r.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

inline RocResult roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  std::vector<double> s(scores.begin(), scores.end());
  return roc_auc(std::span<const double>(s), labels);
}

// Pools every pixel of every map against its mask bit.
inline RocResult roc_auc(std::span<const ResidualMap> residuals, std::span<const Mask> masks) {
  if (residuals.size() != masks.size()) throw ContractError("roc_auc: residual and mask counts differ");
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i].rows != masks[i].rows || residuals[i].cols != masks[i].cols) {
      throw ContractError("roc_auc: mask " + std::to_string(i) + " shape differs from its residual map");
    }
    s.insert(s.end(), residuals[i].scores.begin(), residuals[i].scores.end());
    l.insert(l.end(), masks[i].bits.begin(), masks[i].bits.end());
  }
  return roc_auc(std::span<const double>(s), std::span<const std::uint8_t>(l));
}

struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;  // maximum-likelihood (population) standard deviation
};

inline GaussianFit fit_gaussian(std::span<const double> v) {
  if (v.empty()) throw UndefinedMetricError("gaussian fit of an empty sample");
  long double s = 0.0L;
  for (double x : v) s += x;
  const long double mu = s / static_cast<long double>(v.size());
  long double ss = 0.0L;
  for (double x : v) ss += (x - mu) * (x - mu);
  return {static_cast<double>(mu), static_cast<double>(std::sqrt(ss / static_cast<long double>(v.size())))};
}

// Linear interpolation between order statistics at rank q (n - 1).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw UndefinedMetricError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw ContractError("percentile: q outside [0, 100]");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

enum class IntervalKind { percentile, gaussian };

inline std::string to_string(IntervalKind k) { return k == IntervalKind::gaussian ? "gaussian" : "percentile"; }

inline IntervalKind interval_kind_from_string(const std::string& s) {
  if (s == "percentile") return IntervalKind::percentile;
  if (s == "gaussian") return IntervalKind::gaussian;
  throw ConfigError("unknown interval kind '" + s + "' (expected percentile or gaussian)");
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Central 95% range of the healthy errors: empirical [2.5, 97.5] percentiles,
// or mu +- 1.96 sigma of the Gaussian fit.
inline Interval healthy_interval(std::span<const double> healthy, IntervalKind kind = IntervalKind::percentile) {
  if (healthy.empty()) throw UndefinedMetricError("overlap: empty healthy sample");
  if (kind == IntervalKind::gaussian) {
    const auto f = fit_gaussian(healthy);
    return {f.mu - 1.959963984540054 * f.sigma, f.mu + 1.959963984540054 * f.sigma};
  }
  std::vector<double> v(healthy.begin(), healthy.end());
  return {percentile(v, 2.5), percentile(v, 97.5)};
}

// Percentage of anomalous errors inside the healthy 95% interval (inclusive).
inline double overlap_metric(std::span<const double> healthy, std::span<const double> anomalous,
                             IntervalKind kind = IntervalKind::percentile) {
  if (anomalous.empty()) throw UndefinedMetricError("overlap: empty anomalous sample");
  const Interval iv = healthy_interval(healthy, kind);
  std::size_t inside = 0;
  for (double a : anomalous) inside += (a >= iv.lo && a <= iv.hi) ? 1 : 0;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(anomalous.size());
}

struct Histogram {
  std::vector<double> edges;    // bins + 1
  std::vector<double> density;  // sum(density * width) == 1
};

inline Histogram normalized_histogram(std::span<const double> v, double lo, double hi, int bins) {
  if (v.empty()) throw UndefinedMetricError("histogram of an empty sample");
  if (bins < 1) throw ContractError("histogram: bins must be >= 1");
  if (!(hi > lo)) hi = lo + 1.0;
  Histogram h;
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + b * width);
  h.edges.back() = hi;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    auto b = static_cast<long>(std::floor((x - lo) / width));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < bins; ++b) {
    const double w = h.edges[b + 1] - h.edges[b];
    h.density.push_back(static_cast<double>(counts[b]) / (static_cast<double>(v.size()) * w));
  }
  return h;
}

inline double histogram_integral(const Histogram& h) {
  double s = 0.0;
  for (std::size_t b = 0; b < h.density.size(); ++b) s += h.density[b] * (h.edges[b + 1] - h.edges[b]);
  return s;
}

struct ErrorDistributions {
  std::vector<double> healthy_errors;
  std::vector<double> anomalous_errors;
  double mu_h = 0.0, sigma_h = 0.0, mu_a = 0.0, sigma_a = 0.0;
  double overlap_percent = 0.0;
  Interval healthy_interval;
  Histogram healthy_histogram, anomalous_histogram;  // shared bin edges
};

// Splits every pixel by its mask bit: outside -> healthy, inside -> anomalous.
inline ErrorDistributions error_distributions(std::span<const ResidualMap> residuals, std::span<const Mask> masks,
                                              int bins = 50, IntervalKind kind = IntervalKind::percentile) {
  if (residuals.size() != masks.size()) throw ContractError("error_distributions: residual and mask counts differ");
  ErrorDistributions d;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const auto& r = residuals[i];
    if (r.rows != masks[i].rows || r.cols != masks[i].cols) {
      throw ContractError("error_distributions: mask " + std::to_string(i) + " shape differs from its residual map");
    }
    for (std::size_t p = 0; p < r.scores.size(); ++p) {
      (masks[i].bits[p] ? d.anomalous_errors : d.healthy_errors).push_back(r.scores[p]);
    }
  }
  if (d.healthy_errors.empty()) throw UndefinedMetricError("error_distributions: no healthy pixels");
  if (d.anomalous_errors.empty()) throw UndefinedMetricError("error_distributions: no anomalous pixels");
  const auto fh = fit_gaussian(d.healthy_errors);
  const auto fa = fit_gaussian(d.anomalous_errors);
  d.mu_h = fh.mu;
  d.sigma_h = fh.sigma;
  d.mu_a = fa.mu;
  d.sigma_a = fa.sigma;
  d.healthy_interval = healthy_interval(d.healthy_errors, kind);
  d.overlap_percent = overlap_metric(d.healthy_errors, d.anomalous_errors, kind);
  const auto [lo_h, hi_h] = std::minmax_element(d.healthy_errors.begin(), d.healthy_errors.end());
  const auto [lo_a, hi_a] = std::minmax_element(d.anomalous_errors.begin(), d.anomalous_errors.end());
  const double lo = std::min(*lo_h, *lo_a), hi = std::max(*hi_h, *hi_a);
  d.healthy_histogram = normalized_histogram(d.healthy_errors, lo, hi, bins);
  d.anomalous_histogram = normalized_histogram(d.anomalous_errors, lo, hi, bins);
  return d;
}

// Mean residual inside and outside the masks, each averaged per image first.
struct ResidualContrast {
  double inside = 0.0;
  double outside = 0.0;
  double ratio() const { return inside / outside; }
};

inline ResidualContrast residual_contrast(std::span<const ResidualMap> residuals, std::span<const Mask> masks) {
  if (residuals.size() != masks.size() || residuals.empty()) throw ContractError("residual_contrast: bad input");
  ResidualContrast c;
  std::size_t n = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    double in = 0.0, out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t p = 0; p < residuals[i].scores.size(); ++p) {
      if (masks[i].bits[p]) {
        in += residuals[i].scores[p];
        ++n_in;
      } else {
        out += residuals[i].scores[p];
        ++n_out;
      }
    }
    if (n_in == 0 || n_out == 0) continue;
    c.inside += in / static_cast<double>(n_in);
    c.outside += out / static_cast<double>(n_out);
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("residual_contrast: no image has both mask classes");
  c.inside /= static_cast<double>(n);
  c.outside /= static_cast<double>(n);
  return c;
}

inline std::string fmt17(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_roc_csv(const RocResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "fpr,tpr,threshold\n";
  for (std::size_t i = 0; i < r.tpr.size(); ++i) {
    out << fmt17(r.fpr[i]) << ',' << fmt17(r.tpr[i]) << ',' << fmt17(r.thresholds[i]) << '\n';
  }
}

inline void write_histogram_csv(const ErrorDistributions& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "bin_lo,bin_hi,healthy_density,anomalous_density\n";
  for (std::size_t b = 0; b < d.healthy_histogram.density.size(); ++b) {
    out << fmt17(d.healthy_histogram.edges[b]) << ',' << fmt17(d.healthy_histogram.edges[b + 1]) << ','
        << fmt17(d.healthy_histogram.density[b]) << ',' << fmt17(d.anomalous_histogram.density[b]) << '\n';
  }
}

inline nlohmann::json metrics_json(const RocResult& r, const ErrorDistributions& d, IntervalKind kind) {
  return {{"auc", r.auc},
          {"mu_h", d.mu_h},
          {"sigma_h", d.sigma_h},
          {"mu_a", d.mu_a},
          {"sigma_a", d.sigma_a},
          {"overlap_percent", d.overlap_percent},
          {"interval", to_string(kind)},
          {"healthy_interval", {d.healthy_interval.lo, d.healthy_interval.hi}},
          {"positives", r.positives},
          {"negatives", r.negatives},
          {"healthy_pixels", d.healthy_errors.size()},
          {"anomalous_pixels", d.anomalous_errors.size()}};
}

}  // namespace lcae
