#pragma once

// Residual encoder (stride-2 blocks) and its mirrored decoder (transposed
// stride-2 blocks).

#include <optional>
#include <string>
#include <vector>

#include "lcae/nn/layers.hpp"

namespace lcae::nn {

// y = act(conv2(act(conv1(x))) + skip(x)); skip is a 1x1 projection when the
// shape changes, identity otherwise.
template <class T>
class ResBlock {
 public:
  struct Trace {
    FeatureMap<T> x, a1, h1, a;
  };

  ResBlock() = default;
  ResBlock(ParamLayout& layout, const std::string& name, int in, int out, int stride, LeakyRelu<T> act)
      : name_(name), act_(act) {
    conv1_ = Conv2d<T>(layout, name + ".conv1", in, out, 3, stride, 1);
    conv2_ = Conv2d<T>(layout, name + ".conv2", out, out, 3, 1, 1);
    if (stride != 1 || in != out) skip_ = Conv2d<T>(layout, name + ".skip", in, out, 1, stride, 0, Init::xavier);
  }

  FeatureMap<T> forward(std::span<const T> p, const FeatureMap<T>& x, Trace* trace) const {
    FeatureMap<T> a1 = conv1_.forward(p, x);
    FeatureMap<T> h1 = a1;
    apply_activation<T>(act_, a1.data, h1.data);
    FeatureMap<T> a = conv2_.forward(p, h1);
    if (skip_) {
      const FeatureMap<T> s = skip_->forward(p, x);
      a.matrix() += s.matrix();
    } else {
      a.matrix() += x.matrix();
    }
    FeatureMap<T> y = a;
    apply_activation<T>(act_, a.data, y.data);
    require_finite<T>(y.data, name_);
    if (trace) *trace = Trace{x, std::move(a1), std::move(h1), std::move(a)};
    return y;
  }

  FeatureMap<T> backward(std::span<const T> p, const Trace& t, FeatureMap<T> gy, std::span<T> grads,
                         bool input_grad = true) const {
    activation_backward<T>(act_, t.a.data, gy.data);
    FeatureMap<T> gh1 = conv2_.backward(p, t.h1, gy, grads);
    activation_backward<T>(act_, t.a1.data, gh1.data);
    FeatureMap<T> gx = conv1_.backward(p, t.x, gh1, grads, input_grad);
    if (skip_) {
      FeatureMap<T> gs = skip_->backward(p, t.x, gy, grads, input_grad);
      if (input_grad) gx.matrix() += gs.matrix();
    } else if (input_grad) {
      gx.matrix() += gy.matrix();
    }
    return gx;
  }

  int out_size(int n) const noexcept { return conv1_.out_size(n); }

 private:
  std::string name_;
  LeakyRelu<T> act_;
  Conv2d<T> conv1_, conv2_;
  std::optional<Conv2d<T>> skip_;
};

// image_size x image_size single-channel input -> out_dim features.
template <class T>
class ResNetEncoder {
 public:
  struct Trace {
    std::vector<typename ResBlock<T>::Trace> blocks;
    Matrix<T> flat;
    int channels = 0, spatial = 0;
  };

  ResNetEncoder() = default;
  ResNetEncoder(ParamLayout& layout, int image_size, const std::vector<int>& channels, int out_dim,
                LeakyRelu<T> act)
      : image_size_(image_size) {
    int in = 1, s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      blocks_.emplace_back(layout, "encoder.block" + std::to_string(i + 1), in, channels[i], 2, act);
      in = channels[i];
      s = (s + 1) / 2;
    }
    last_channels_ = in;
    spatial_ = s;
    head_ = Dense<T>(layout, "encoder.head", in * s * s, out_dim, Init::xavier);
  }

  int out_dim() const noexcept { return head_.out(); }

  Matrix<T> forward(std::span<const T> p, const FeatureMap<T>& x, Trace* trace) const {
    if (x.channels != 1 || x.height != image_size_ || x.width != image_size_) {
      throw ContractError("encoder: expected " + std::to_string(image_size_) + "x" + std::to_string(image_size_) +
                          " single-channel input");
    }
    if (trace) trace->blocks.resize(blocks_.size());
    FeatureMap<T> h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(p, h, trace ? &trace->blocks[i] : nullptr);
    }
    Matrix<T> flat = flatten(h);
    Matrix<T> out = head_.forward(p, flat);
    require_finite<T>(std::span<const T>(out.data(), static_cast<std::size_t>(out.size())), "encoder.head");
    if (trace) {
      trace->flat = std::move(flat);
      trace->channels = h.channels;
      trace->spatial = h.height;
    }
    return out;
  }

  FeatureMap<T> backward(std::span<const T> p, const Trace& t, const Matrix<T>& g_out, std::span<T> grads,
                         bool input_grad = true) const {
    Matrix<T> g_flat = head_.backward(p, t.flat, g_out, grads);
    FeatureMap<T> g = unflatten(g_flat, t.channels, t.spatial, t.spatial);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      g = blocks_[i].backward(p, t.blocks[i], std::move(g), grads, input_grad || i > 0);
    }
    return g;
  }

 private:
  int image_size_ = 32;
  int last_channels_ = 0, spatial_ = 0;
  std::vector<ResBlock<T>> blocks_;
  Dense<T> head_;
};

// Mirror of ResBlock:
//   y = act(convT(act(conv(x))) + upsample(skip(x)))
// where conv is a stride-1 3x3 convolution at the input resolution, convT a
// stride-2 transposed convolution that doubles the resolution, and skip a 1x1
// projection. The last block of the decoder omits the final activation.
template <class T>
class UpResBlock {
 public:
  struct Trace {
    FeatureMap<T> x, a1, h1, a;
  };

  UpResBlock() = default;
  UpResBlock(ParamLayout& layout, const std::string& name, int in, int out, bool linear_output, LeakyRelu<T> act)
      : name_(name), act_(act), linear_(linear_output) {
    conv_ = Conv2d<T>(layout, name + ".conv", in, in, 3, 1, 1);
    up_ = ConvTranspose2d<T>(layout, name + ".convT", in, out, 3, 2, 1, linear_output ? Init::xavier : Init::he);
    skip_ = Conv2d<T>(layout, name + ".skip", in, out, 1, 1, 0, Init::xavier);
  }

  FeatureMap<T> forward(std::span<const T> p, const FeatureMap<T>& x, Trace* trace) const {
    FeatureMap<T> a1 = conv_.forward(p, x);
    FeatureMap<T> h1 = a1;
    apply_activation<T>(act_, a1.data, h1.data);
    FeatureMap<T> a = up_.forward(p, h1);
    a.matrix() += upsample2x(skip_.forward(p, x)).matrix();
    FeatureMap<T> y = a;
    if (!linear_) apply_activation<T>(act_, a.data, y.data);
    require_finite<T>(y.data, name_);
    if (trace) *trace = Trace{x, std::move(a1), std::move(h1), std::move(a)};
    return y;
  }

  FeatureMap<T> backward(std::span<const T> p, const Trace& t, FeatureMap<T> gy, std::span<T> grads) const {
    if (!linear_) activation_backward<T>(act_, t.a.data, gy.data);
    FeatureMap<T> gh1 = up_.backward(p, t.h1, gy, grads);
    activation_backward<T>(act_, t.a1.data, gh1.data);
    FeatureMap<T> gx = conv_.backward(p, t.x, gh1, grads);
    gx.matrix() += skip_.backward(p, t.x, upsample2x_backward(gy), grads).matrix();
    return gx;
  }

 private:
  std::string name_;
  LeakyRelu<T> act_;
  bool linear_ = false;
  Conv2d<T> conv_;
  ConvTranspose2d<T> up_;
  Conv2d<T> skip_;
};

// latent_dim -> image_size x image_size single-channel output (linear).
// Channel widths run through `channels` in reverse, ending at one channel.
template <class T>
class ResNetDecoder {
 public:
  struct Trace {
    Matrix<T> z, pre;
    std::vector<typename UpResBlock<T>::Trace> blocks;
  };

  ResNetDecoder() = default;
  ResNetDecoder(ParamLayout& layout, int image_size, const std::vector<int>& channels, int latent_dim,
                LeakyRelu<T> act)
      : act_(act), image_size_(image_size) {
    spatial_ = image_size >> channels.size();
    first_channels_ = channels.back();
    head_ = Dense<T>(layout, "decoder.head", latent_dim, first_channels_ * spatial_ * spatial_);
    int in = first_channels_;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t j = channels.size() - 1 - i;
      const int out = j > 0 ? channels[j - 1] : 1;
      blocks_.emplace_back(layout, "decoder.block" + std::to_string(i + 1), in, out, j == 0, act);
      in = out;
    }
  }

  FeatureMap<T> forward(std::span<const T> p, const Matrix<T>& z, Trace* trace) const {
    Matrix<T> pre = head_.forward(p, z);
    Matrix<T> h0 = pre.unaryExpr([this](T v) { return act_(v); });
    FeatureMap<T> h = unflatten(h0, first_channels_, spatial_, spatial_);
    if (trace) trace->blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(p, h, trace ? &trace->blocks[i] : nullptr);
    }
    if (h.height != image_size_) throw ContractError("decoder: output size mismatch");
    if (trace) {
      trace->z = z;
      trace->pre = std::move(pre);
    }
    return h;
  }

  // Returns d(loss)/d(z) when requested.
  Matrix<T> backward(std::span<const T> p, const Trace& t, const FeatureMap<T>& g_out, std::span<T> grads,
                     bool input_grad = true) const {
    FeatureMap<T> g = g_out;
    for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(p, t.blocks[i], std::move(g), grads);
    Matrix<T> g0 = flatten(g);
    for (Eigen::Index i = 0; i < g0.size(); ++i) g0.data()[i] *= act_.derivative(t.pre.data()[i]);
    return head_.backward(p, t.z, g0, grads, input_grad);
  }

 private:
  LeakyRelu<T> act_;
  int image_size_ = 32;
  int spatial_ = 1, first_channels_ = 0;
  Dense<T> head_;
  std::vector<UpResBlock<T>> blocks_;
};

}  // namespace lcae::nn
