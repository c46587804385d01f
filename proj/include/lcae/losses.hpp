#pragma once

// Loss terms for the VAE, the AAE with a WGAN-GP latent critic, and the
// latent-consistency constrained AAE. Batch losses are per-sample sums averaged
// over the batch. Each *_gradient function shares its forward pass with the
// matching loss so the reported values and the gradients always agree.

#include <type_traits>
#include <cmath>
#include <concepts>
#include <span>

#include "lcae/model.hpp"

namespace lcae {

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// KL(N(mean, exp(log_variance)) || N(0, I)).
template <class T>
T kl_divergence(const LatentDistribution<T>& d) {
  if (d.mean.size() != d.log_variance.size()) throw ContractError("kl_divergence: dimension mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < d.dim(); ++i) {
    const T lv = d.log_variance[i], mu = d.mean[i];
    acc += T(1) + lv - mu * mu - std::exp(lv);
  }
  return T(-0.5) * acc;
}

// Sum of squared pixel differences.
inline double reconstruction_loss(const Image& x, const Image& x_prime) {
  if (!x.same_shape(x_prime)) throw ContractError("reconstruction_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.pixels[i]) - x_prime.pixels[i];
    acc += d * d;
  }
  return acc;
}

// Squared Euclidean distance between two codes.
template <class T>
T latent_consistency_loss(const LatentCode<T>& a, const LatentCode<T>& b) {
  if (a.dim() != b.dim()) throw ContractError("latent_consistency_loss: dimension mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a.dim(); ++i) acc += (a.z[i] - b.z[i]) * (a.z[i] - b.z[i]);
  return acc;
}

// A critic usable by the gradient penalty: row-wise scores and input gradients.
template <class C, class T>
concept LatentCritic = requires(const C& c, const Matrix<T>& z) {
  { c.score(z) } -> std::convertible_to<Vector<T>>;
  { c.input_gradient(z) } -> std::convertible_to<Matrix<T>>;
};

// MLP critic bound to a parameter vector.
template <class T>
struct BoundCritic {
  const nn::MlpCritic<T>* net;
  std::span<const T> params;

  Vector<T> score(const Matrix<T>& z) const { return net->score(params, z); }
  Matrix<T> input_gradient(const Matrix<T>& z) const { return net->input_gradient(params, z); }
};

template <class T>
BoundCritic<T> bound_critic(const Model<T>& m) {
  if (m.kind != ModelKind::aae) throw ContractError("critic is only defined for AAE models");
  return {&m.nets.critic, m.crit()};
}

template <class T>
T critic_score(const Model<T>& m, const LatentCode<T>& code) {
  if (static_cast<int>(code.dim()) != m.latent_dim()) throw ContractError("critic_score: dimension mismatch");
  Matrix<T> z(1, m.latent_dim());
  for (int i = 0; i < m.latent_dim(); ++i) z(0, i) = code.z[static_cast<std::size_t>(i)];
  return bound_critic(m).score(z)(0);
}

// Rows eps_i * real_i + (1 - eps_i) * fake_i.
template <class T>
Matrix<T> interpolate(const Matrix<T>& z_real, const Matrix<T>& z_fake, const Vector<T>& eps) {
  if (z_real.rows() != z_fake.rows() || z_real.cols() != z_fake.cols() || eps.size() != z_real.rows()) {
    throw ContractError("gradient_penalty: batches differ in shape");
  }
  Matrix<T> out(z_real.rows(), z_real.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = eps(i) * z_real.row(i) + (T(1) - eps(i)) * z_fake.row(i);
  return out;
}

// mean_i (||grad D(zhat_i)|| - 1)^2 at the interpolates zhat.
template <class T, LatentCritic<T> C>
T gradient_penalty(const C& critic, const Matrix<T>& z_real, const Matrix<T>& z_fake, const Vector<T>& eps) {
  const Matrix<T> g = critic.input_gradient(interpolate(z_real, z_fake, eps));
  T acc = T(0);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const T d = g.row(i).norm() - T(1);
    acc += d * d;
  }
  return acc / static_cast<T>(g.rows());
}

namespace detail {

template <class T>
Vector<T> per_sample_squared_error(const nn::FeatureMap<T>& a, const nn::FeatureMap<T>& b) {
  const std::size_t per = static_cast<std::size_t>(a.height) * a.width;
  Vector<T> out(a.batch);
  for (int n = 0; n < a.batch; ++n) {
    T acc = T(0);
    for (std::size_t i = 0; i < per; ++i) {
      const T d = a.data[n * per + i] - b.data[n * per + i];
      acc += d * d;
    }
    out(n) = acc;
  }
  return out;
}

template <class T>
Vector<T> row_squared_distance(const Matrix<T>& a, const Matrix<T>& b) {
  return (a - b).rowwise().squaredNorm();
}

template <class T>
ModelParameters<T> zero_like(const Model<T>& m) {
  ModelParameters<T> g;
  g.encoder.assign(m.params.encoder.size(), T(0));
  g.decoder.assign(m.params.decoder.size(), T(0));
  g.critic.assign(m.params.critic.size(), T(0));
  return g;
}

}  // namespace detail

template <class T>
struct VaeLosses {
  T total = T(0);
  T reconstruction = T(0);
  T kl = T(0);
};

// total = reconstruction + kl_weight * kl, each a batch mean. When `grads` is
// given, d(total)/d(encoder, decoder) is accumulated into it.
template <class T>
VaeLosses<T> vae_loss_gradient(const Model<T>& m, const nn::FeatureMap<T>& x, const Matrix<T>& noise, T kl_weight,
                               std::type_identity_t<ModelParameters<T>>* grads) {
  if (m.kind != ModelKind::vae) throw ContractError("vae_loss on a non-VAE model");
  const int dz = m.latent_dim();
  const Eigen::Index n = x.batch;
  if (noise.rows() != n || noise.cols() != dz) throw ContractError("vae_loss: noise must be batch x latent_dim");

  typename nn::ResNetEncoder<T>::Trace te;
  typename nn::ResNetDecoder<T>::Trace td;
  const Matrix<T> head = m.nets.encoder.forward(m.enc(), x, grads ? &te : nullptr);
  Matrix<T> mean, lv;
  split_gaussian_head(head, dz, mean, lv);
  const Matrix<T> z = reparameterize(mean, lv, noise);
  const nn::FeatureMap<T> xr = m.nets.decoder.forward(m.dec(), z, grads ? &td : nullptr);

  const Vector<T> rec = detail::per_sample_squared_error(xr, x);
  Vector<T> kl(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    T acc = T(0);
    for (int j = 0; j < dz; ++j) acc += T(1) + lv(i, j) - mean(i, j) * mean(i, j) - std::exp(lv(i, j));
    kl(i) = T(-0.5) * acc;
  }
  VaeLosses<T> out;
  out.reconstruction = rec.mean();
  out.kl = kl.mean();
  out.total = out.reconstruction + kl_weight * out.kl;
  if (!grads) return out;

  const T inv_n = T(1) / static_cast<T>(n);
  nn::FeatureMap<T> g_xr = xr;
  for (std::size_t i = 0; i < g_xr.size(); ++i) g_xr.data[i] = T(2) * inv_n * (xr.data[i] - x.data[i]);
  const Matrix<T> g_z = m.nets.decoder.backward(m.dec(), td, g_xr, grads->decoder);

  Matrix<T> g_head(n, 2 * dz);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < dz; ++j) {
      const T sigma = std::exp(T(0.5) * lv(i, j));
      g_head(i, j) = g_z(i, j) + kl_weight * inv_n * mean(i, j);
      const T raw = head(i, dz + j);
      const bool clamped = raw < T(-kLogVarianceLimit) || raw > T(kLogVarianceLimit);
      g_head(i, dz + j) = clamped ? T(0)
                                  : g_z(i, j) * noise(i, j) * T(0.5) * sigma +
                                        T(0.5) * kl_weight * inv_n * (std::exp(lv(i, j)) - T(1));
    }
  }
  m.nets.encoder.backward(m.enc(), te, g_head, grads->encoder, false);
  return out;
}

template <class T>
VaeLosses<T> vae_loss(const Model<T>& m, std::span<const Image> batch, const Matrix<T>& noise, T kl_weight = T(1)) {
  return vae_loss_gradient(m, to_feature_map<T>(batch), noise, kl_weight, nullptr);
}

template <class T>
struct AutoencoderLosses {
  T total = T(0);               // reconstruction + lambda_lc * latent_consistency
  T reconstruction = T(0);
  T latent_consistency = T(0);  // ||z - E(D(z))||^2, reported for every lambda_lc
};

// Autoencoder objective of the AAE. The second encoding E(D(z)) is always
// evaluated so the consistency term is reported; it contributes gradients only
// when lambda_lc > 0.
template <class T>
AutoencoderLosses<T> autoencoder_loss_gradient(const Model<T>& m, const Hyperparameters& hp, const nn::FeatureMap<T>& x,
                                               std::type_identity_t<ModelParameters<T>>* grads) {
  if (m.kind != ModelKind::aae) throw ContractError("autoencoder loss on a non-AAE model");
  const T lambda = static_cast<T>(hp.lambda_lc);
  const Eigen::Index n = x.batch;
  typename nn::ResNetEncoder<T>::Trace t1, t2;
  typename nn::ResNetDecoder<T>::Trace td;
  const bool backprop_lc = grads && hp.lambda_lc > 0.0;

  const Matrix<T> z = m.nets.encoder.forward(m.enc(), x, grads ? &t1 : nullptr);
  const nn::FeatureMap<T> xr = m.nets.decoder.forward(m.dec(), z, grads ? &td : nullptr);
  const Matrix<T> z2 = m.nets.encoder.forward(m.enc(), xr, backprop_lc ? &t2 : nullptr);

  AutoencoderLosses<T> out;
  out.reconstruction = detail::per_sample_squared_error(xr, x).mean();
  out.latent_consistency = detail::row_squared_distance(z, z2).mean();
  out.total = out.reconstruction + lambda * out.latent_consistency;
  if (!grads) return out;

  const T inv_n = T(1) / static_cast<T>(n);
  nn::FeatureMap<T> g_xr = xr;
  for (std::size_t i = 0; i < g_xr.size(); ++i) g_xr.data[i] = T(2) * inv_n * (xr.data[i] - x.data[i]);
  Matrix<T> diff;
  if (backprop_lc) {
    diff = (T(2) * lambda * inv_n) * (z - z2);
    const Matrix<T> g_z2 = -diff;
    const bool through = !hp.stop_gradient_at_reconstruction;
    nn::FeatureMap<T> g_xr_lc = m.nets.encoder.backward(m.enc(), t2, g_z2, grads->encoder, through);
    if (through) g_xr.matrix() += g_xr_lc.matrix();
  }
  Matrix<T> g_z = m.nets.decoder.backward(m.dec(), td, g_xr, grads->decoder);
  if (backprop_lc) g_z += diff;
  m.nets.encoder.backward(m.enc(), t1, g_z, grads->encoder, false);
  return out;
}

template <class T>
struct CriticLosses {
  T total = T(0);             // mean D(fake) - mean D(prior) + lambda_gp * penalty
  T wasserstein = T(0);       // mean D(prior) - mean D(fake)
  T gradient_penalty = T(0);  // unweighted
};

// The critic minimizes `total`, i.e. maximizes the score gap between prior
// samples and encoder codes.
template <class T>
CriticLosses<T> critic_loss_gradient(const Model<T>& m, const Hyperparameters& hp, const Matrix<T>& z_fake,
                                     const Matrix<T>& z_prior, const Vector<T>& eps, std::type_identity_t<ModelParameters<T>>* grads) {
  const auto& critic = m.nets.critic;
  const Eigen::Index n = z_fake.rows();
  if (z_prior.rows() != n || z_prior.cols() != z_fake.cols()) throw ContractError("critic loss: batch mismatch");
  typename nn::MlpCritic<T>::Trace tf, tp;
  const Vector<T> d_fake = critic.score(m.crit(), z_fake, &tf);
  const Vector<T> d_prior = critic.score(m.crit(), z_prior, &tp);
  const Matrix<T> zhat = interpolate(z_prior, z_fake, eps);

  CriticLosses<T> out;
  out.wasserstein = d_prior.mean() - d_fake.mean();
  if (grads) {
    const T inv_n = T(1) / static_cast<T>(n);
    critic.score_backward(m.crit(), tf, Vector<T>::Constant(n, inv_n), grads->critic);
    critic.score_backward(m.crit(), tp, Vector<T>::Constant(n, -inv_n), grads->critic);
    out.gradient_penalty =
        critic.penalty_and_gradient(m.crit(), zhat, static_cast<T>(hp.lambda_gp), std::span<T>(grads->critic));
  } else {
    out.gradient_penalty = gradient_penalty<T>(bound_critic(m), z_prior, z_fake, eps);
  }
  out.total = d_fake.mean() - d_prior.mean() + static_cast<T>(hp.lambda_gp) * out.gradient_penalty;
  return out;
}

// -mean D(E(x)); accumulates the encoder gradient only.
template <class T>
T encoder_adversarial_gradient(const Model<T>& m, const nn::FeatureMap<T>& x, std::type_identity_t<ModelParameters<T>>* grads) {
  typename nn::ResNetEncoder<T>::Trace te;
  typename nn::MlpCritic<T>::Trace tc;
  const Matrix<T> z = m.nets.encoder.forward(m.enc(), x, grads ? &te : nullptr);
  const Vector<T> d = m.nets.critic.score(m.crit(), z, &tc);
  const T loss = -d.mean();
  if (grads) {
    const Eigen::Index n = x.batch;
    const Matrix<T> g_z = m.nets.critic.score_backward(m.crit(), tc, Vector<T>::Constant(n, T(-1) / static_cast<T>(n)),
                                                       grads->critic, false);
    m.nets.encoder.backward(m.enc(), te, g_z, grads->encoder, false);
  }
  return loss;
}

template <class T>
struct AaeLosses {
  T autoencoder = T(0);
  T reconstruction = T(0);
  T latent_consistency = T(0);
  T critic = T(0);
  T wasserstein = T(0);
  T gradient_penalty = T(0);
  T encoder_adversarial = T(0);
};

// All AAE objectives at the current parameters. `eps` holds the per-sample
// interpolation weights of the gradient penalty.
template <class T>
AaeLosses<T> aae_losses(const Model<T>& m, const Hyperparameters& hp, std::span<const Image> batch,
                        const Matrix<T>& prior_samples, const Vector<T>& eps) {
  const nn::FeatureMap<T> x = to_feature_map<T>(batch);
  const auto ae = autoencoder_loss_gradient(m, hp, x, nullptr);
  const Matrix<T> z = m.nets.encoder.forward(m.enc(), x, nullptr);
  const auto cr = critic_loss_gradient(m, hp, z, prior_samples, eps, nullptr);
  AaeLosses<T> out;
  out.autoencoder = ae.total;
  out.reconstruction = ae.reconstruction;
  out.latent_consistency = ae.latent_consistency;
  out.critic = cr.total;
  out.wasserstein = cr.wasserstein;
  out.gradient_penalty = cr.gradient_penalty;
  out.encoder_adversarial = -m.nets.critic.score(m.crit(), z).mean();
  return out;
}

}  // namespace lcae
