#pragma once

// Building blocks for the encoder/decoder networks.
//
// Parameters of a network live in one flat vector; every layer owns a slice of it
// described by a ParamLayout entry. Feature maps are stored channel-major,
// [C][N][H][W], so a convolution is a single GEMM over the whole batch.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lcae/error.hpp"

namespace lcae::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

// Numeric storage that Eigen maps over. The fixed base alignment keeps the
// vectorized reductions in the same order on every allocation, which makes
// results bit-reproducible.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct FeatureMap {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  Buffer<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int n, int h, int w)
      : channels(c), batch(n), height(h), width(w), data(static_cast<std::size_t>(c) * n * h * w, T(0)) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(batch) * height * width; }
  std::size_t size() const noexcept { return data.size(); }
  T& at(int c, int n, int y, int x) noexcept {
    return data[((static_cast<std::size_t>(c) * batch + n) * height + y) * width + x];
  }
  T at(int c, int n, int y, int x) const noexcept {
    return data[((static_cast<std::size_t>(c) * batch + n) * height + y) * width + x];
  }
  MatrixMap<T> matrix() noexcept { return MatrixMap<T>(data.data(), channels, static_cast<Eigen::Index>(plane())); }
  ConstMatrixMap<T> matrix() const noexcept {
    return ConstMatrixMap<T>(data.data(), channels, static_cast<Eigen::Index>(plane()));
  }
};

enum class Init { he, xavier, zero };

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  int fan_in = 1;
  int fan_out = 1;
  Init init = Init::he;
};

// Records where each parameter tensor lives inside a flat parameter vector.
class ParamLayout {
 public:
  std::size_t add(std::string name, std::size_t count, int fan_in, int fan_out, Init init) {
    const std::size_t off = size_;
    blocks_.push_back({std::move(name), off, count, fan_in, fan_out, init});
    size_ += count;
    return off;
  }
  std::size_t size() const noexcept { return size_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }

  template <class T, class Rng>
  void initialize(std::span<T> params, Rng& rng, double leaky_slope) const {
    if (params.size() != size_) throw ContractError("initialize: parameter vector has wrong size");
    for (const auto& b : blocks_) {
      double stddev = 0.0;
      switch (b.init) {
        case Init::he: stddev = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * b.fan_in)); break;
        case Init::xavier: stddev = std::sqrt(2.0 / (b.fan_in + b.fan_out)); break;
        case Init::zero: break;
      }
      std::normal_distribution<double> dist(0.0, 1.0);
      for (std::size_t i = 0; i < b.count; ++i) {
        params[b.offset + i] = b.init == Init::zero ? T(0) : static_cast<T>(stddev * dist(rng));
      }
    }
  }

 private:
  std::size_t size_ = 0;
  std::vector<ParamBlock> blocks_;
};

template <class T>
void require_finite(std::span<const T> v, const std::string& where) {
  for (T x : v) {
    if (!std::isfinite(x)) throw NumericalError(where, "non-finite activation");
  }
}

template <class T>
struct LeakyRelu {
  T slope = T(0.2);

  T operator()(T x) const noexcept { return x > T(0) ? x : slope * x; }
  T derivative(T x) const noexcept { return x > T(0) ? T(1) : slope; }
  T second_derivative(T) const noexcept { return T(0); }
};

template <class T>
void apply_activation(const LeakyRelu<T>& act, std::span<const T> pre, std::span<T> out) noexcept {
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = act(pre[i]);
}

// grad <- grad * act'(pre)
template <class T>
void activation_backward(const LeakyRelu<T>& act, std::span<const T> pre, std::span<T> grad) noexcept {
  for (std::size_t i = 0; i < pre.size(); ++i) grad[i] *= act.derivative(pre[i]);
}

// Patch matrix (C*k*k) x (N*ho*wo) of a channel-major feature map.
template <class T>
Matrix<T> im2col(const FeatureMap<T>& x, int k, int stride, int pad, int ho, int wo) {
  const Eigen::Index np = static_cast<Eigen::Index>(x.batch) * ho * wo;
  Matrix<T> cols(static_cast<Eigen::Index>(x.channels) * k * k, np);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * np;
        for (int n = 0; n < x.batch; ++n) {
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            T* dst = row + (static_cast<Eigen::Index>(n) * ho + oy) * wo;
            if (iy < 0 || iy >= x.height) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = x.data.data() + ((static_cast<std::size_t>(c) * x.batch + n) * x.height + iy) * x.width;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              dst[ox] = (ix < 0 || ix >= x.width) ? T(0) : src[ix];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds patch columns back into `out`.
template <class T>
void col2im(const Matrix<T>& cols, FeatureMap<T>& out, int k, int stride, int pad, int ho, int wo) {
  const Eigen::Index np = static_cast<Eigen::Index>(out.batch) * ho * wo;
  for (int c = 0; c < out.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * np;
        for (int n = 0; n < out.batch; ++n) {
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= out.height) continue;
            const T* src = row + (static_cast<Eigen::Index>(n) * ho + oy) * wo;
            T* dst = out.data.data() + ((static_cast<std::size_t>(c) * out.batch + n) * out.height + iy) * out.width;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < out.width) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel, int stride, int pad,
         Init init = Init::he)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), name_(name) {
    const int fan_in = in * kernel * kernel;
    w_off_ = layout.add(name + ".weight", static_cast<std::size_t>(out) * fan_in, fan_in, out * kernel * kernel, init);
    b_off_ = layout.add(name + ".bias", static_cast<std::size_t>(out), fan_in, out, Init::zero);
  }

  int out_size(int n) const noexcept { return (n + 2 * pad_ - k_) / stride_ + 1; }
  const std::string& name() const noexcept { return name_; }

  FeatureMap<T> forward(std::span<const T> params, const FeatureMap<T>& x) const {
    if (x.channels != in_) throw ContractError(name_ + ": expected " + std::to_string(in_) + " input channels");
    const int ho = out_size(x.height), wo = out_size(x.width);
    FeatureMap<T> y(out_, x.batch, ho, wo);
    auto ym = y.matrix();
    if (pointwise()) {
      ym.noalias() = weight(params) * x.matrix();
    } else {
      ym.noalias() = weight(params) * im2col(x, ho, wo);
    }
    ym.colwise() += bias(params);
    return y;
  }

  // Accumulates parameter gradients into `grads`; returns d(loss)/d(x) when requested.
  FeatureMap<T> backward(std::span<const T> params, const FeatureMap<T>& x, const FeatureMap<T>& gy,
                         std::span<T> grads, bool input_grad = true) const {
    const int ho = gy.height, wo = gy.width;
    const auto gym = gy.matrix();
    auto gw = MatrixMap<T>(grads.data() + w_off_, out_, in_ * k_ * k_);
    if (pointwise()) {
      gw.noalias() += gym * x.matrix().transpose();
    } else {
      gw.noalias() += gym * im2col(x, ho, wo).transpose();
    }
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.data() + b_off_, out_) += gym.rowwise().sum();
    FeatureMap<T> gx;
    if (!input_grad) return gx;
    gx = FeatureMap<T>(in_, x.batch, x.height, x.width);
    if (pointwise()) {
      gx.matrix().noalias() = weight(params).transpose() * gym;
    } else {
      col2im(weight(params).transpose() * gym, gx, ho, wo);
    }
    return gx;
  }

 private:
  ConstMatrixMap<T> weight(std::span<const T> p) const noexcept {
    return ConstMatrixMap<T>(p.data() + w_off_, out_, in_ * k_ * k_);
  }
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(std::span<const T> p) const noexcept {
    return Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(p.data() + b_off_, out_);
  }

  bool pointwise() const noexcept { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  Matrix<T> im2col(const FeatureMap<T>& x, int ho, int wo) const { return nn::im2col(x, k_, stride_, pad_, ho, wo); }
  void col2im(const Matrix<T>& cols, FeatureMap<T>& gx, int ho, int wo) const {
    nn::col2im(cols, gx, k_, stride_, pad_, ho, wo);
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  std::size_t w_off_ = 0, b_off_ = 0;
  std::string name_;
};

// Transposed convolution: the adjoint of a stride-s Conv2d, mapping n x n to
// (s*n) x (s*n) for k = 3, pad = 1, s = 2.
template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamLayout& layout, const std::string& name, int in, int out, int kernel, int stride, int pad,
                  Init init = Init::he)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), name_(name) {
    const int fan_in = std::max(1, in * kernel * kernel / (stride * stride));
    w_off_ = layout.add(name + ".weight", static_cast<std::size_t>(in) * out * kernel * kernel, fan_in,
                        out * kernel * kernel, init);
    b_off_ = layout.add(name + ".bias", static_cast<std::size_t>(out), fan_in, out, Init::zero);
  }

  FeatureMap<T> forward(std::span<const T> params, const FeatureMap<T>& x) const {
    if (x.channels != in_) throw ContractError(name_ + ": expected " + std::to_string(in_) + " input channels");
    FeatureMap<T> y(out_, x.batch, x.height * stride_, x.width * stride_);
    const Matrix<T> cols = weight(params).transpose() * x.matrix();
    col2im(cols, y, k_, stride_, pad_, x.height, x.width);
    y.matrix().colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(params.data() + b_off_, out_);
    return y;
  }

  FeatureMap<T> backward(std::span<const T> params, const FeatureMap<T>& x, const FeatureMap<T>& gy,
                         std::span<T> grads, bool input_grad = true) const {
    const Matrix<T> cols = im2col(gy, k_, stride_, pad_, x.height, x.width);
    MatrixMap<T>(grads.data() + w_off_, in_, out_ * k_ * k_).noalias() += x.matrix() * cols.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.data() + b_off_, out_) += gy.matrix().rowwise().sum();
    FeatureMap<T> gx;
    if (!input_grad) return gx;
    gx = FeatureMap<T>(in_, x.batch, x.height, x.width);
    gx.matrix().noalias() = weight(params) * cols;
    return gx;
  }

 private:
  ConstMatrixMap<T> weight(std::span<const T> p) const noexcept {
    return ConstMatrixMap<T>(p.data() + w_off_, in_, out_ * k_ * k_);
  }

  int in_ = 0, out_ = 0, k_ = 3, stride_ = 2, pad_ = 1;
  std::size_t w_off_ = 0, b_off_ = 0;
  std::string name_;
};

// Fully connected layer on row-major batches (one sample per row).
template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(ParamLayout& layout, const std::string& name, int in, int out, Init init = Init::he)
      : in_(in), out_(out), name_(name) {
    w_off_ = layout.add(name + ".weight", static_cast<std::size_t>(out) * in, in, out, init);
    b_off_ = layout.add(name + ".bias", static_cast<std::size_t>(out), in, out, Init::zero);
  }

  int in() const noexcept { return in_; }
  int out() const noexcept { return out_; }
  const std::string& name() const noexcept { return name_; }

  ConstMatrixMap<T> weight(std::span<const T> p) const noexcept { return ConstMatrixMap<T>(p.data() + w_off_, out_, in_); }
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(std::span<const T> p) const noexcept {
    return Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(p.data() + b_off_, out_);
  }
  MatrixMap<T> weight_grad(std::span<T> g) const noexcept { return MatrixMap<T>(g.data() + w_off_, out_, in_); }
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bias_grad(std::span<T> g) const noexcept {
    return Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.data() + b_off_, out_);
  }

  Matrix<T> forward(std::span<const T> params, const Matrix<T>& x) const {
    if (x.cols() != in_) throw ContractError(name_ + ": expected " + std::to_string(in_) + " input features");
    Matrix<T> y = x * weight(params).transpose();
    y.rowwise() += bias(params);
    return y;
  }

  Matrix<T> backward(std::span<const T> params, const Matrix<T>& x, const Matrix<T>& gy, std::span<T> grads,
                     bool input_grad = true) const {
    weight_grad(grads).noalias() += gy.transpose() * x;
    bias_grad(grads) += gy.colwise().sum();
    if (!input_grad) return {};
    return gy * weight(params);
  }

 private:
  int in_ = 0, out_ = 0;
  std::size_t w_off_ = 0, b_off_ = 0;
  std::string name_;
};

template <class T>
FeatureMap<T> upsample2x(const FeatureMap<T>& x) {
  FeatureMap<T> y(x.channels, x.batch, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n)
      for (int i = 0; i < y.height; ++i)
        for (int j = 0; j < y.width; ++j) y.at(c, n, i, j) = x.at(c, n, i / 2, j / 2);
  return y;
}

template <class T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& gy) {
  FeatureMap<T> gx(gy.channels, gy.batch, gy.height / 2, gy.width / 2);
  for (int c = 0; c < gy.channels; ++c)
    for (int n = 0; n < gy.batch; ++n)
      for (int i = 0; i < gy.height; ++i)
        for (int j = 0; j < gy.width; ++j) gx.at(c, n, i / 2, j / 2) += gy.at(c, n, i, j);
  return gx;
}

// [C][N][H][W] -> N x (C*H*W)
template <class T>
Matrix<T> flatten(const FeatureMap<T>& x) {
  const int per = x.height * x.width;
  Matrix<T> m(x.batch, static_cast<Eigen::Index>(x.channels) * per);
  for (int c = 0; c < x.channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      const T* src = x.data.data() + (static_cast<std::size_t>(c) * x.batch + n) * per;
      std::copy(src, src + per, m.data() + static_cast<Eigen::Index>(n) * m.cols() + static_cast<Eigen::Index>(c) * per);
    }
  return m;
}

template <class T>
FeatureMap<T> unflatten(const Matrix<T>& m, int channels, int height, int width) {
  FeatureMap<T> x(channels, static_cast<int>(m.rows()), height, width);
  const int per = height * width;
  for (int c = 0; c < channels; ++c)
    for (int n = 0; n < x.batch; ++n) {
      const T* src = m.data() + static_cast<Eigen::Index>(n) * m.cols() + static_cast<Eigen::Index>(c) * per;
      std::copy(src, src + per, x.data.data() + (static_cast<std::size_t>(c) * x.batch + n) * per);
    }
  return x;
}

}  // namespace lcae::nn
