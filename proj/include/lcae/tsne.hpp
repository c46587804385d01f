#pragma once

// Exact O(n^2) t-distributed stochastic neighbor embedding into two dimensions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lcae/error.hpp"

namespace lcae {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

using Point2 = std::array<double, 2>;

namespace detail {

// Row-conditional affinities with a per-row bandwidth found by bisection on the
// entropy, then symmetrized and normalized to sum 1.
inline std::vector<double> tsne_affinities(const std::vector<std::vector<double>>& x, double perplexity) {
  const std::size_t n = x.size();
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
      d2[i * n + j] = d2[j * n + i] = s;
    }
  }
  const double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0), row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * d2[i * n + j]);
        sum += row[j];
        dot += row[j] * d2[i * n + j];
      }
      sum = std::max(sum, 1e-300);
      const double entropy = std::log(sum) + beta * dot / sum;
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] = row[j] / sum;
      const double diff = entropy - target;
      if (std::fabs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  std::vector<double> sym(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sym[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);
  }
  return sym;
}

}  // namespace detail

inline std::vector<Point2> tsne(const std::vector<std::vector<double>>& x, const TsneOptions& opt = {}) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  for (const auto& r : x) {
    if (r.size() != x.front().size()) throw ContractError("tsne: rows differ in dimension");
  }
  if (!(opt.perplexity > 0.0) || opt.iterations < 0) throw ConfigError("tsne: invalid options");
  if (n == 1) return {Point2{0.0, 0.0}};
  const double perplexity = std::min(opt.perplexity, (static_cast<double>(n) - 1.0) / 3.0);
  const std::vector<double> p = detail::tsne_affinities(x, std::max(perplexity, 1.0));

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  std::vector<Point2> y(n), vel(n, Point2{0, 0}), gains(n, Point2{1, 1});
  for (auto& pt : y) pt = {init(rng), init(rng)};
  std::vector<double> num(n * n);
  std::vector<Point2> grad(n);
  for (int it = 0; it < opt.iterations; ++it) {
    const double exag = it < opt.exaggeration_iterations ? opt.early_exaggeration : 1.0;
    const double momentum = it < opt.exaggeration_iterations ? 0.5 : 0.8;
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      Point2 g{0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = num[i * n + j];
        const double w = (exag * p[i * n + j] - q / z) * q;
        g[0] += w * (y[i][0] - y[j][0]);
        g[1] += w * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * g[0], 4.0 * g[1]};
    }
    Point2 mean{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        const bool same = (grad[i][d] > 0) == (vel[i][d] > 0);
        gains[i][d] = std::max(same ? gains[i][d] * 0.8 : gains[i][d] + 0.2, 0.01);
        vel[i][d] = momentum * vel[i][d] - opt.learning_rate * gains[i][d] * grad[i][d];
        y[i][d] += vel[i][d];
        mean[d] += y[i][d];
      }
    }
    for (auto& pt : y) {
      pt[0] -= mean[0] / static_cast<double>(n);
      pt[1] -= mean[1] / static_cast<double>(n);
    }
  }
  for (const auto& pt : y) {
    if (!std::isfinite(pt[0]) || !std::isfinite(pt[1])) throw NumericalError("tsne", "non-finite embedding");
  }
  return y;
}

}  // namespace lcae
