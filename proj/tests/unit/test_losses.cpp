#include <gtest/gtest.h>

#include <random>

#include "lcae/losses.hpp"
#include "lcae/model.hpp"
#include "oracles.hpp"

using namespace lcae;

namespace {

Architecture tiny(nn::ActivationKind critic = nn::ActivationKind::tanh) {
  Architecture a;
  a.image_size = 8;
  a.channels = {2, 3};
  a.latent_dim = 3;
  a.critic_width = 5;
  a.critic_depth = 2;
  a.critic_activation = critic;
  return a;
}

std::vector<Image> images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Image> v;
  for (int i = 0; i < n; ++i) v.push_back(oracle::random_image(8, 8, rng));
  return v;
}

// FD over one parameter section of a copy of `m`.
template <class F>
std::vector<double> fd(const Model<double>& m, nn::Buffer<double> ModelParameters<double>::*section, F&& loss) {
  const auto f = [&](std::span<const double> p) {
    Model<double> c = m;
    (c.params.*section).assign(p.begin(), p.end());
    return loss(c);
  };
  const auto& p = m.params.*section;
  return oracle::numeric_gradient(f, p);
}

TEST(KlDivergence, ClosedFormMatchesMonteCarlo) {
  // Means away from zero keep the estimator's relative standard error near 0.2%.
  LatentDistribution<double> d{{1.5, -2.0, 0.8, 1.2}, {-0.5, 0.3, -1.0, 0.0}};
  std::mt19937_64 rng(123);
  std::normal_distribution<double> n(0.0, 1.0);
  const int samples = 100000;
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t j = 0; j < d.mean.size(); ++j) {
      const double e = n(rng);
      const double z = d.mean[j] + std::exp(0.5 * d.log_variance[j]) * e;
      log_ratio += -0.5 * d.log_variance[j] - 0.5 * e * e + 0.5 * z * z;
    }
    acc += log_ratio;
  }
  const double mc = acc / samples;
  EXPECT_NEAR(kl_divergence(d) / mc, 1.0, 0.01);
}

TEST(KlDivergence, KnownValue) {
  // 0.5 * (mu^2 + sigma^2 - 1 - log sigma^2) per dimension
  EXPECT_NEAR(kl_divergence(LatentDistribution<double>{{0.4}, {0.0}}), 0.08, 1e-15);
  EXPECT_NEAR(kl_divergence(LatentDistribution<double>{{0.0}, {std::log(2.0)}}), 0.5 * (1.0 - std::log(2.0)), 1e-15);
}

TEST(KlDivergence, ZeroAtThePrior) {
  EXPECT_EQ(kl_divergence(LatentDistribution<double>{{0, 0, 0}, {0, 0, 0}}), 0.0);
  EXPECT_GT(kl_divergence(LatentDistribution<double>{{0.1}, {0.0}}), 0.0);
}

TEST(ReconstructionLoss, SumOfSquares) {
  Image a(2, 2), b(2, 2);
  a.pixels = {1, 2, 3, 4};
  b.pixels = {1, 0, 3, 7};
  EXPECT_EQ(reconstruction_loss(a, b), 13.0);
  EXPECT_EQ(reconstruction_loss(a, a), 0.0);
  EXPECT_THROW(reconstruction_loss(a, Image(3, 1)), ContractError);
}

TEST(LatentConsistency, SquaredDistance) {
  EXPECT_EQ(latent_consistency_loss(LatentCode<double>{{1, 2}}, LatentCode<double>{{1, 2}}), 0.0);
  EXPECT_EQ(latent_consistency_loss(LatentCode<double>{{0, 0}}, LatentCode<double>{{3, 4}}), 25.0);
  EXPECT_THROW(latent_consistency_loss(LatentCode<double>{{0}}, LatentCode<double>{{3, 4}}), ContractError);
}

TEST(Reparameterize, MeanPlusScaledNoise) {
  LatentDistribution<double> d{{1.0, -2.0}, {0.0, std::log(4.0)}};
  std::vector<double> eps{0.5, -1.0};
  const auto z = reparameterize(d, std::span<const double>(eps));
  EXPECT_DOUBLE_EQ(z.z[0], 1.5);
  EXPECT_DOUBLE_EQ(z.z[1], -4.0);
}

TEST(Encoding, VaeGivesDistributionAaeGivesCode) {
  const auto v = Model<double>::initialized(ModelKind::vae, tiny(), 1);
  const auto a = Model<double>::initialized(ModelKind::aae, tiny(), 1);
  const auto im = images(1, 3).front();
  EXPECT_TRUE(std::holds_alternative<LatentDistribution<double>>(encode(v, im)));
  EXPECT_TRUE(std::holds_alternative<LatentCode<double>>(encode(a, im)));
  LatentCode<double> nan{{0, std::nan(""), 0}};
  EXPECT_THROW(decode(a, nan), NumericalError);
  EXPECT_THROW(decode(a, LatentCode<double>{{0, 0}}), ContractError);
}

TEST(VaeLoss, GradientMatchesFiniteDifferences) {
  const auto m = Model<double>::initialized(ModelKind::vae, tiny(), 7);
  const auto batch = images(3, 1);
  const auto x = to_feature_map<double>(batch);
  std::mt19937_64 rng(2);
  const Matrix<double> noise = standard_normal<double>(3, 3, rng);
  for (double kl_w : {1.0, 0.3}) {
    auto g = detail::zero_like(m);
    const auto l = vae_loss_gradient<double>(m, x, noise, kl_w, &g);
    EXPECT_NEAR(l.total, l.reconstruction + kl_w * l.kl, 1e-12);
    const auto loss = [&](const Model<double>& c) { return vae_loss_gradient<double>(c, x, noise, kl_w, nullptr).total; };
    EXPECT_LT(oracle::relative_error(g.encoder, fd(m, &ModelParameters<double>::encoder, loss)), 1e-4);
    EXPECT_LT(oracle::relative_error(g.decoder, fd(m, &ModelParameters<double>::decoder, loss)), 1e-4);
  }
}

TEST(VaeLoss, BatchMeanOfPerImageTerms) {
  const auto m = Model<double>::initialized(ModelKind::vae, tiny(), 3);
  const auto batch = images(2, 4);
  Matrix<double> zero = Matrix<double>::Zero(2, 3);
  const auto l = vae_loss<double>(m, batch, zero);
  double rec = 0.0, kl = 0.0;
  for (const auto& im : batch) {
    const auto d = std::get<LatentDistribution<double>>(encode(m, im));
    rec += reconstruction_loss(im, decode(m, LatentCode<double>{d.mean}));
    kl += kl_divergence(d);
  }
  EXPECT_NEAR(l.reconstruction, rec / 2, 1e-4 * rec);
  EXPECT_NEAR(l.kl, kl / 2, 1e-9);
}

class AutoencoderGradient : public ::testing::TestWithParam<std::pair<double, bool>> {};

TEST_P(AutoencoderGradient, MatchesFiniteDifferences) {
  const auto [lambda, stop] = GetParam();
  const auto m = Model<double>::initialized(ModelKind::aae, tiny(), 13);
  const auto batch = images(3, 5);
  const auto x = to_feature_map<double>(batch);
  Hyperparameters hp;
  hp.lambda_lc = lambda;
  hp.stop_gradient_at_reconstruction = stop;
  auto g = detail::zero_like(m);
  const auto l = autoencoder_loss_gradient(m, hp, x, &g);
  EXPECT_NEAR(l.total, l.reconstruction + lambda * l.latent_consistency, 1e-12);
  EXPECT_GT(l.latent_consistency, 0.0);

  // Under the stop-gradient the reconstruction fed to the second encoding is a constant.
  const nn::FeatureMap<double> x_fixed = m.nets.decoder.forward(m.dec(), m.nets.encoder.forward(m.enc(), x, nullptr), nullptr);
  const auto loss = [&](const Model<double>& c) {
    if (!stop) return autoencoder_loss_gradient(c, hp, x, nullptr).total;
    const Matrix<double> z = c.nets.encoder.forward(c.enc(), x, nullptr);
    const auto xr = c.nets.decoder.forward(c.dec(), z, nullptr);
    const Matrix<double> z2 = c.nets.encoder.forward(c.enc(), x_fixed, nullptr);
    return detail::per_sample_squared_error(xr, x).mean() + lambda * detail::row_squared_distance(z, z2).mean();
  };
  EXPECT_LT(oracle::relative_error(g.encoder, fd(m, &ModelParameters<double>::encoder, loss)), 1e-4);
  EXPECT_LT(oracle::relative_error(g.decoder, fd(m, &ModelParameters<double>::decoder, loss)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Lambdas, AutoencoderGradient,
                         ::testing::Values(std::pair{0.0, false}, std::pair{0.5, false}, std::pair{1.0, false},
                                           std::pair{1.0, true}));

class CriticGradient : public ::testing::TestWithParam<nn::ActivationKind> {};

TEST_P(CriticGradient, MatchesFiniteDifferences) {
  const auto m = Model<double>::initialized(ModelKind::aae, tiny(GetParam()), 17);
  std::mt19937_64 rng(3);
  const Matrix<double> fake = standard_normal<double>(4, 3, rng) * 0.7;
  const Matrix<double> prior = standard_normal<double>(4, 3, rng);
  Vector<double> eps(4);
  eps << 0.1, 0.5, 0.9, 0.33;
  Hyperparameters hp;
  auto g = detail::zero_like(m);
  const auto l = critic_loss_gradient(m, hp, fake, prior, eps, &g);
  const auto l2 = critic_loss_gradient(m, hp, fake, prior, eps, nullptr);
  EXPECT_NEAR(l.total, l2.total, 1e-12);
  EXPECT_NEAR(l.gradient_penalty, l2.gradient_penalty, 1e-12);
  EXPECT_NEAR(l.total, -l.wasserstein + hp.lambda_gp * l.gradient_penalty, 1e-12);
  const auto loss = [&](const Model<double>& c) { return critic_loss_gradient(c, hp, fake, prior, eps, nullptr).total; };
  EXPECT_LT(oracle::relative_error(g.critic, fd(m, &ModelParameters<double>::critic, loss)), 1e-4);
  for (double v : g.encoder) EXPECT_EQ(v, 0.0);
}

INSTANTIATE_TEST_SUITE_P(Activations, CriticGradient,
                         ::testing::Values(nn::ActivationKind::tanh, nn::ActivationKind::leaky_relu));

TEST(CriticInputGradient, MatchesFiniteDifferences) {
  const auto m = Model<double>::initialized(ModelKind::aae, tiny(), 21);
  std::mt19937_64 rng(8);
  const Matrix<double> z = standard_normal<double>(1, 3, rng);
  const Matrix<double> gz = m.nets.critic.input_gradient(m.crit(), z);
  std::vector<double> zv(z.data(), z.data() + 3), gv(gz.data(), gz.data() + 3);
  const auto f = [&](std::span<const double> v) {
    Matrix<double> zz(1, 3);
    std::copy(v.begin(), v.end(), zz.data());
    return m.nets.critic.score(m.crit(), zz)(0);
  };
  EXPECT_LT(oracle::relative_error(gv, oracle::numeric_gradient(f, zv)), 1e-6);
}

TEST(EncoderAdversarial, GradientMatchesFiniteDifferences) {
  const auto m = Model<double>::initialized(ModelKind::aae, tiny(), 19);
  const auto x = to_feature_map<double>(images(3, 9));
  auto g = detail::zero_like(m);
  const double l = encoder_adversarial_gradient(m, x, &g);
  const auto loss = [&](const Model<double>& c) { return encoder_adversarial_gradient<double>(c, x, nullptr); };
  EXPECT_NEAR(l, loss(m), 1e-12);
  EXPECT_LT(oracle::relative_error(g.encoder, fd(m, &ModelParameters<double>::encoder, loss)), 1e-4);
  for (double v : g.critic) EXPECT_EQ(v, 0.0);
  for (double v : g.decoder) EXPECT_EQ(v, 0.0);
}

TEST(GradientPenalty, ZeroForUnitNormLinearCritic) {
  Architecture a = tiny();
  a.critic_depth = 0;
  auto m = Model<double>::initialized(ModelKind::aae, a, 1);
  m.params.critic = {0.48, 0.6, 0.64, -3.0};  // weight (unit norm) then bias
  std::mt19937_64 rng(4);
  const Matrix<double> fake = standard_normal<double>(16, 3, rng);
  const Matrix<double> prior = standard_normal<double>(16, 3, rng);
  Vector<double> eps = (Vector<double>::Random(16).array() + 1.0) / 2.0;
  EXPECT_NEAR(gradient_penalty<double>(bound_critic(m), prior, fake, eps), 0.0, 1e-12);
  auto g = detail::zero_like(m);
  EXPECT_NEAR(m.nets.critic.penalty_and_gradient(m.crit(), interpolate(prior, fake, eps), 10.0, g.critic), 0.0, 1e-12);
  m.params.critic = {0.96, 1.2, 1.28, 0.0};  // norm 2
  EXPECT_NEAR(gradient_penalty<double>(bound_critic(m), prior, fake, eps), 1.0, 1e-12);
}

TEST(Interpolate, EndpointsAndShape) {
  Matrix<double> a = Matrix<double>::Constant(2, 2, 1.0), b = Matrix<double>::Constant(2, 2, 3.0);
  Vector<double> e(2);
  e << 1.0, 0.25;
  const auto z = interpolate(a, b, e);
  EXPECT_EQ(z(0, 0), 1.0);
  EXPECT_EQ(z(1, 1), 2.5);
  EXPECT_THROW(interpolate(a, Matrix<double>(3, 2), e), ContractError);
}

// A plain AAE objective assembled from the networks directly; the constrained
// objective with lambda_lc = 0 must agree with it bit for bit.
TEST(LatentConsistencyOff, MatchesPlainAutoencoderBitwise) {
  const auto m = Model<float>::initialized(ModelKind::aae, tiny(), 23);
  const auto x = to_feature_map<float>(images(4, 2));
  Hyperparameters hp;
  hp.lambda_lc = 0.0;
  auto g = detail::zero_like(m);
  const auto l = autoencoder_loss_gradient(m, hp, x, &g);

  typename nn::ResNetEncoder<float>::Trace te;
  typename nn::ResNetDecoder<float>::Trace td;
  const Matrix<float> z = m.nets.encoder.forward(m.enc(), x, &te);
  const auto xr = m.nets.decoder.forward(m.dec(), z, &td);
  const float rec = detail::per_sample_squared_error(xr, x).mean();
  auto gp = detail::zero_like(m);
  nn::FeatureMap<float> gxr = xr;
  for (std::size_t i = 0; i < gxr.size(); ++i) gxr.data[i] = 2.0f * (1.0f / 4.0f) * (xr.data[i] - x.data[i]);
  const Matrix<float> gz = m.nets.decoder.backward(m.dec(), td, gxr, gp.decoder);
  m.nets.encoder.backward(m.enc(), te, gz, gp.encoder, false);

  EXPECT_EQ(l.total, rec);
  EXPECT_EQ(l.reconstruction, rec);
  EXPECT_EQ(g.encoder, gp.encoder);
  EXPECT_EQ(g.decoder, gp.decoder);
}

TEST(LossGuards, WrongModelKind) {
  const auto v = Model<double>::initialized(ModelKind::vae, tiny(), 1);
  const auto a = Model<double>::initialized(ModelKind::aae, tiny(), 1);
  const auto x = to_feature_map<double>(images(1, 1));
  Hyperparameters hp;
  EXPECT_THROW(autoencoder_loss_gradient(v, hp, x, nullptr), ContractError);
  EXPECT_THROW(vae_loss_gradient<double>(a, x, Matrix<double>::Zero(1, 3), 1.0, nullptr), ContractError);
  EXPECT_THROW(vae_loss_gradient<double>(v, x, Matrix<double>::Zero(2, 3), 1.0, nullptr), ContractError);
}

}  // namespace
