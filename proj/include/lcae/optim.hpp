#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "lcae/error.hpp"

namespace lcae {

// Adaptive-moment gradient descent over one flat parameter vector.
template <class T>
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, T(0)), v_(n, T(0)) {}

  void step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ContractError("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      params[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<T, Eigen::aligned_allocator<T>> m_, v_;
};

}  // namespace lcae
