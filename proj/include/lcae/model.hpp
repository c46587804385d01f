#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lcae/image.hpp"
#include "lcae/nn/critic.hpp"
#include "lcae/nn/resnet.hpp"

namespace lcae {

using nn::Matrix;

enum class ModelKind { vae, aae };

inline std::string to_string(ModelKind k) { return k == ModelKind::vae ? "vae" : "aae"; }

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "vae") return ModelKind::vae;
  if (s == "aae") return ModelKind::aae;
  throw ConfigError("unknown model kind '" + s + "' (expected vae or aae)");
}

inline constexpr double kLogVarianceLimit = 10.0;

// Fully determines every parameter shape.
struct Architecture {
  int image_size = 32;
  std::vector<int> channels{32, 64, 128, 256};
  int latent_dim = 64;
  int critic_width = 256;
  int critic_depth = 3;
  double leaky_slope = 0.2;
  nn::ActivationKind critic_activation = nn::ActivationKind::leaky_relu;

  void validate() const {
    if (channels.empty()) throw ConfigError("architecture: at least one residual block is required");
    for (int c : channels) {
      if (c < 1) throw ConfigError("architecture: channel widths must be positive");
    }
    if ((image_size >> channels.size()) < 1 || (image_size % (1 << channels.size())) != 0) {
      throw ConfigError("architecture: image_size must be divisible by 2^blocks");
    }
    if (latent_dim < 1 || critic_width < 1 || critic_depth < 0) throw ConfigError("architecture: invalid sizes");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("architecture: leaky_slope must be in [0, 1)");
  }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Hyperparameters {
  double lambda_lc = 0.0;   // latent-consistency weight
  double lambda_gp = 10.0;  // gradient-penalty coefficient
  double kl_weight = 1.0;   // VAE reconstruction:KL weighting is 1:kl_weight
  double learning_rate = 1e-4;
  double critic_learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 64;
  int n_critic = 5;
  bool stop_gradient_at_reconstruction = false;

  void validate() const {
    if (!(lambda_lc >= 0.0)) throw ConfigError("lambda_lc must be >= 0");
    if (!(lambda_gp > 0.0)) throw ConfigError("lambda_gp must be > 0");
    if (!(kl_weight > 0.0)) throw ConfigError("kl_weight must be > 0");
    if (!(learning_rate > 0.0) || !(critic_learning_rate > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("moment coefficients must lie in (0, 1)");
    }
    if (batch_size < 1 || n_critic < 1) throw ConfigError("batch_size and n_critic must be >= 1");
  }
  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

template <class T>
struct LatentDistribution {
  std::vector<T> mean;
  std::vector<T> log_variance;

  std::size_t dim() const noexcept { return mean.size(); }
};

template <class T>
struct LatentCode {
  std::vector<T> z;

  std::size_t dim() const noexcept { return z.size(); }
};

template <class T>
struct ModelParameters {
  nn::Buffer<T> encoder;
  nn::Buffer<T> decoder;
  nn::Buffer<T> critic;  // empty for VAE

  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

// Network definitions (shapes and parameter layouts) for one model kind.
template <class T>
struct Networks {
  nn::ParamLayout encoder_layout, decoder_layout, critic_layout;
  nn::ResNetEncoder<T> encoder;
  nn::ResNetDecoder<T> decoder;
  nn::MlpCritic<T> critic;

  Networks(ModelKind kind, const Architecture& arch) {
    arch.validate();
    const nn::LeakyRelu<T> act{static_cast<T>(arch.leaky_slope)};
    const int head = kind == ModelKind::vae ? 2 * arch.latent_dim : arch.latent_dim;
    encoder = nn::ResNetEncoder<T>(encoder_layout, arch.image_size, arch.channels, head, act);
    decoder = nn::ResNetDecoder<T>(decoder_layout, arch.image_size, arch.channels, arch.latent_dim, act);
    if (kind == ModelKind::aae) {
      critic = nn::MlpCritic<T>(critic_layout, arch.latent_dim, arch.critic_width, arch.critic_depth,
                                nn::Activation<T>{arch.critic_activation, static_cast<T>(arch.leaky_slope)});
    }
  }
};

template <class T>
struct Model {
  ModelKind kind;
  Architecture arch;
  Networks<T> nets;
  ModelParameters<T> params;

  Model(ModelKind k, const Architecture& a) : kind(k), arch(a), nets(k, a) {
    params.encoder.assign(nets.encoder_layout.size(), T(0));
    params.decoder.assign(nets.decoder_layout.size(), T(0));
    params.critic.assign(nets.critic_layout.size(), T(0));
  }

  static Model initialized(ModelKind k, const Architecture& a, std::uint64_t seed) {
    Model m(k, a);
    std::mt19937_64 rng(seed);
    m.nets.encoder_layout.initialize(std::span<T>(m.params.encoder), rng, a.leaky_slope);
    m.nets.decoder_layout.initialize(std::span<T>(m.params.decoder), rng, a.leaky_slope);
    m.nets.critic_layout.initialize(std::span<T>(m.params.critic), rng, a.leaky_slope);
    return m;
  }

  int latent_dim() const noexcept { return arch.latent_dim; }
  std::span<const T> enc() const noexcept { return params.encoder; }
  std::span<const T> dec() const noexcept { return params.decoder; }
  std::span<const T> crit() const noexcept { return params.critic; }
};

template <class T>
nn::FeatureMap<T> to_feature_map(std::span<const Image> images) {
  if (images.empty()) throw ContractError("empty image batch");
  const int rows = images.front().rows, cols = images.front().cols;
  nn::FeatureMap<T> x(1, static_cast<int>(images.size()), rows, cols);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].rows != rows || images[n].cols != cols) throw ContractError("image batch has mixed shapes");
    std::copy(images[n].pixels.begin(), images[n].pixels.end(), x.data.begin() + static_cast<std::ptrdiff_t>(n * images[n].size()));
  }
  return x;
}

template <class T>
Image image_at(const nn::FeatureMap<T>& x, int n) {
  Image img(x.height, x.width);
  const std::size_t per = img.size();
  for (std::size_t i = 0; i < per; ++i) img.pixels[i] = static_cast<float>(x.data[n * per + i]);
  return img;
}

// Split a VAE head output into (mean, clamped log-variance) blocks.
template <class T>
void split_gaussian_head(const Matrix<T>& head, int dz, Matrix<T>& mean, Matrix<T>& log_variance) {
  mean = head.leftCols(dz);
  log_variance = head.rightCols(dz).unaryExpr([](T v) {
    return std::clamp(v, static_cast<T>(-kLogVarianceLimit), static_cast<T>(kLogVarianceLimit));
  });
}

// z = mean + exp(log_variance / 2) * noise, row-wise.
template <class T>
Matrix<T> reparameterize(const Matrix<T>& mean, const Matrix<T>& log_variance, const Matrix<T>& noise) {
  if (noise.rows() != mean.rows() || noise.cols() != mean.cols()) throw ContractError("reparameterize: noise shape mismatch");
  Matrix<T> z(mean.rows(), mean.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    z.data()[i] = mean.data()[i] + std::exp(T(0.5) * log_variance.data()[i]) * noise.data()[i];
  }
  return z;
}

template <class T>
LatentCode<T> reparameterize(const LatentDistribution<T>& dist, std::span<const T> noise) {
  if (noise.size() != dist.dim()) throw ContractError("reparameterize: noise dimension mismatch");
  LatentCode<T> out{std::vector<T>(dist.dim())};
  for (std::size_t i = 0; i < dist.dim(); ++i) {
    out.z[i] = dist.mean[i] + std::exp(T(0.5) * dist.log_variance[i]) * noise[i];
  }
  return out;
}

// Raw encoder head for a batch: N x d_z (AAE) or N x 2 d_z (VAE, mean then log-variance).
template <class T>
Matrix<T> encode_head(const Model<T>& m, std::span<const Image> images) {
  return m.nets.encoder.forward(m.enc(), to_feature_map<T>(images), nullptr);
}

// Deterministic latent codes: the code itself for AAE, the posterior mean for VAE.
template <class T>
Matrix<T> encode_codes(const Model<T>& m, std::span<const Image> images) {
  Matrix<T> head = encode_head(m, images);
  if (m.kind == ModelKind::vae) return head.leftCols(m.latent_dim());
  return head;
}

template <class T>
std::vector<Image> decode_batch(const Model<T>& m, const Matrix<T>& z) {
  if (z.cols() != m.latent_dim()) throw ContractError("decode: latent dimension mismatch");
  const nn::FeatureMap<T> y = m.nets.decoder.forward(m.dec(), z, nullptr);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(y.batch));
  for (int n = 0; n < y.batch; ++n) out.push_back(image_at(y, n));
  return out;
}

using Encoding = std::variant<LatentDistribution<double>, LatentCode<double>>;

template <class T>
Encoding encode(const Model<T>& m, const Image& image) {
  const Matrix<T> head = encode_head(m, std::span<const Image>(&image, 1));
  const int dz = m.latent_dim();
  if (m.kind == ModelKind::vae) {
    Matrix<T> mean, lv;
    split_gaussian_head(head, dz, mean, lv);
    LatentDistribution<double> d;
    for (int i = 0; i < dz; ++i) {
      d.mean.push_back(static_cast<double>(mean(0, i)));
      d.log_variance.push_back(static_cast<double>(lv(0, i)));
    }
    return d;
  }
  LatentCode<double> c;
  for (int i = 0; i < dz; ++i) c.z.push_back(static_cast<double>(head(0, i)));
  return c;
}

template <class T>
Image decode(const Model<T>& m, const LatentCode<double>& code) {
  if (static_cast<int>(code.dim()) != m.latent_dim()) throw ContractError("decode: latent dimension mismatch");
  for (double v : code.z) {
    if (!std::isfinite(v)) throw NumericalError("decoder.input", "non-finite latent code");
  }
  Matrix<T> z(1, m.latent_dim());
  for (int i = 0; i < m.latent_dim(); ++i) z(0, i) = static_cast<T>(code.z[static_cast<std::size_t>(i)]);
  return decode_batch(m, z).front();
}

template <class T, class Rng>
Matrix<T> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace lcae
