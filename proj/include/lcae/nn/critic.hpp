#pragma once

// Wasserstein critic on latent codes: a plain MLP with no normalization layers,
// so the per-sample input gradient (and its norm) is well defined.

#include <cmath>
#include <string>
#include <vector>

#include "lcae/nn/layers.hpp"

namespace lcae::nn {

enum class ActivationKind { leaky_relu, tanh };

inline std::string to_string(ActivationKind k) { return k == ActivationKind::tanh ? "tanh" : "leaky_relu"; }

inline ActivationKind activation_from_string(const std::string& s) {
  if (s == "tanh") return ActivationKind::tanh;
  if (s == "leaky_relu") return ActivationKind::leaky_relu;
  throw ContractError("unknown activation '" + s + "'");
}

template <class T>
struct Activation {
  ActivationKind kind = ActivationKind::leaky_relu;
  T slope = T(0.2);

  T f(T x) const noexcept {
    if (kind == ActivationKind::tanh) return std::tanh(x);
    return x > T(0) ? x : slope * x;
  }
  T df(T x) const noexcept {
    if (kind == ActivationKind::tanh) {
      const T t = std::tanh(x);
      return T(1) - t * t;
    }
    return x > T(0) ? T(1) : slope;
  }
  T d2f(T x) const noexcept {
    if (kind == ActivationKind::tanh) {
      const T t = std::tanh(x);
      return T(-2) * t * (T(1) - t * t);
    }
    return T(0);
  }
  bool piecewise_linear() const noexcept { return kind == ActivationKind::leaky_relu; }
};

template <class T>
class MlpCritic {
 public:
  struct Trace {
    std::vector<Matrix<T>> pre;   // A_l, l = 1..depth
    std::vector<Matrix<T>> post;  // H_l, l = 0..depth (H_0 = input)
  };

  MlpCritic() = default;
  // depth hidden layers of `width` units followed by a linear scalar output.
  // depth = 0 gives a linear critic.
  MlpCritic(ParamLayout& layout, int latent_dim, int width, int depth, Activation<T> act)
      : latent_dim_(latent_dim), act_(act) {
    int in = latent_dim;
    for (int l = 0; l < depth; ++l) {
      hidden_.emplace_back(layout, "critic.dense" + std::to_string(l + 1), in, width);
      in = width;
    }
    out_ = Dense<T>(layout, "critic.output", in, 1, Init::xavier);
  }

  int latent_dim() const noexcept { return latent_dim_; }
  const Activation<T>& activation() const noexcept { return act_; }

  // One score per row of z.
  Eigen::Matrix<T, Eigen::Dynamic, 1> score(std::span<const T> p, const Matrix<T>& z, Trace* trace = nullptr) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    t.pre.clear();
    t.post.clear();
    t.post.push_back(z);
    for (const auto& layer : hidden_) {
      t.pre.push_back(layer.forward(p, t.post.back()));
      t.post.push_back(t.pre.back().unaryExpr([this](T v) { return act_.f(v); }));
    }
    Matrix<T> d = out_.forward(p, t.post.back());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d.data()[i])) throw NumericalError("critic.output", "non-finite critic score");
    }
    return Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(d.data(), d.rows());
  }

  // Accumulates d(sum_i g_i * D(z_i))/d(params); returns the gradient w.r.t. z.
  Matrix<T> score_backward(std::span<const T> p, const Trace& t, const Eigen::Matrix<T, Eigen::Dynamic, 1>& g,
                           std::span<T> grads, bool param_grad = true) const {
    Matrix<T> gy = g;
    Buffer<T> scratch;
    std::span<T> sink = grads;
    if (!param_grad) {
      scratch.assign(grads.size(), T(0));
      sink = scratch;
    }
    Matrix<T> gh = out_.backward(p, t.post.back(), gy, sink);
    for (std::size_t l = hidden_.size(); l-- > 0;) {
      const Matrix<T>& a = t.pre[l];
      for (Eigen::Index i = 0; i < gh.size(); ++i) gh.data()[i] *= act_.df(a.data()[i]);
      gh = hidden_[l].backward(p, t.post[l], gh, sink);
    }
    return gh;
  }

  // Per-sample gradient of D with respect to its input (rows of z).
  Matrix<T> input_gradient(std::span<const T> p, const Matrix<T>& z) const {
    Trace t;
    score(p, z, &t);
    std::vector<Matrix<T>> gh;
    return input_gradient_from_trace(p, t, &gh);
  }

  // P = mean_i (||grad_z D(z_i)|| - 1)^2. Returns P and adds weight * dP/d(params)
  // to `grads` by reverse-mode differentiation of the input-gradient computation.
  T penalty_and_gradient(std::span<const T> p, const Matrix<T>& z, T weight, std::span<T> grads) const {
    const Eigen::Index n = z.rows();
    Trace t;
    score(p, z, &t);
    std::vector<Matrix<T>> gh;  // gh[l] = d D / d H_l
    const Matrix<T> g = input_gradient_from_trace(p, t, &gh);

    T penalty = T(0);
    Matrix<T> u(n, z.cols());  // adjoint of gh[0]
    for (Eigen::Index i = 0; i < n; ++i) {
      const T norm = g.row(i).norm();
      penalty += (norm - T(1)) * (norm - T(1));
      if (norm > T(0)) {
        u.row(i) = (T(2) * weight / static_cast<T>(n)) * (norm - T(1)) / norm * g.row(i);
      } else {
        u.row(i).setZero();
      }
    }
    penalty /= static_cast<T>(n);

    const std::size_t depth = hidden_.size();
    std::vector<Matrix<T>> a_bar(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      const auto& layer = hidden_[l];
      const Matrix<T>& a = t.pre[l];
      // gh[l] = ga * W, ga = gh[l+1] (.) f'(a)
      Matrix<T> ga = gh[l + 1];
      for (Eigen::Index i = 0; i < ga.size(); ++i) ga.data()[i] *= act_.df(a.data()[i]);
      Matrix<T> u_a = u * layer.weight(p).transpose();
      layer.weight_grad(grads).noalias() += ga.transpose() * u;
      a_bar[l] = Matrix<T>::Zero(a.rows(), a.cols());
      if (!act_.piecewise_linear()) {
        for (Eigen::Index i = 0; i < a.size(); ++i) {
          a_bar[l].data()[i] = u_a.data()[i] * gh[l + 1].data()[i] * act_.d2f(a.data()[i]);
        }
      }
      for (Eigen::Index i = 0; i < u_a.size(); ++i) u_a.data()[i] *= act_.df(a.data()[i]);
      u = std::move(u_a);
    }
    // gh[depth] is the broadcast output weight row.
    out_.weight_grad(grads) += u.colwise().sum();

    if (!act_.piecewise_linear()) {
      Matrix<T> h_bar;
      for (std::size_t l = depth; l-- > 0;) {
        Matrix<T> total = a_bar[l];
        if (l + 1 < depth) {
          for (Eigen::Index i = 0; i < total.size(); ++i) total.data()[i] += h_bar.data()[i] * act_.df(t.pre[l].data()[i]);
        }
        hidden_[l].weight_grad(grads).noalias() += total.transpose() * t.post[l];
        hidden_[l].bias_grad(grads) += total.colwise().sum();
        if (l > 0) h_bar = total * hidden_[l].weight(p);
      }
    }
    return penalty;
  }

 private:
  Matrix<T> input_gradient_from_trace(std::span<const T> p, const Trace& t, std::vector<Matrix<T>>* gh) const {
    const Eigen::Index n = t.post.front().rows();
    const std::size_t depth = hidden_.size();
    gh->assign(depth + 1, Matrix<T>());
    (*gh)[depth] = Matrix<T>::Ones(n, 1) * out_.weight(p);
    for (std::size_t l = depth; l-- > 0;) {
      Matrix<T> ga = (*gh)[l + 1];
      for (Eigen::Index i = 0; i < ga.size(); ++i) ga.data()[i] *= act_.df(t.pre[l].data()[i]);
      (*gh)[l] = ga * hidden_[l].weight(p);
    }
    return (*gh)[0];
  }

  int latent_dim_ = 0;
  Activation<T> act_;
  std::vector<Dense<T>> hidden_;
  Dense<T> out_;
};

}  // namespace lcae::nn
