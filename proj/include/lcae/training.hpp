#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lcae/image.hpp"
#include "lcae/losses.hpp"
#include "lcae/model.hpp"
#include "lcae/optim.hpp"

namespace lcae {

struct TrainConfig {
  ModelKind kind = ModelKind::aae;
  Architecture arch;
  Hyperparameters hyper;
  int epochs = 200;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables the callback

  void validate() const {
    arch.validate();
    hyper.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }
};

// Per-step scalar log. `values[s][t]` is term t at optimization step s.
struct TrainLog {
  std::vector<std::string> terms;
  std::vector<std::vector<double>> values;
  std::vector<int> epoch_of_step;
  double wall_seconds = 0.0;

  std::size_t steps() const noexcept { return values.size(); }

  std::vector<double> series(const std::string& term) const {
    const auto it = std::find(terms.begin(), terms.end(), term);
    if (it == terms.end()) throw ContractError("no such log term: " + term);
    const auto t = static_cast<std::size_t>(it - terms.begin());
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& row : values) out.push_back(row[t]);
    return out;
  }

  // Mean of each term over the steps of one epoch.
  std::vector<double> epoch_means(int epoch) const {
    std::vector<double> acc(terms.size(), 0.0);
    int n = 0;
    for (std::size_t s = 0; s < values.size(); ++s) {
      if (epoch_of_step[s] != epoch) continue;
      for (std::size_t t = 0; t < terms.size(); ++t) acc[t] += values[s][t];
      ++n;
    }
    for (double& a : acc) a /= std::max(n, 1);
    return acc;
  }

  int epochs() const noexcept { return epoch_of_step.empty() ? 0 : epoch_of_step.back() + 1; }
};

inline std::vector<std::string> log_terms(ModelKind kind) {
  if (kind == ModelKind::vae) return {"loss", "reconstruction", "kl"};
  return {"autoencoder_loss", "reconstruction",      "latent_consistency", "critic_loss",
          "wasserstein",      "gradient_penalty",    "encoder_adversarial"};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Writes `train_log.csv` (step,epoch,term,value) and `train_summary.json`.
inline void write_train_log(const TrainLog& log, const std::filesystem::path& dir,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "train_log.csv");
  if (!csv) throw IngestionError("cannot write " + (dir / "train_log.csv").string());
  csv << "step,epoch,term,value\n";
  for (std::size_t s = 0; s < log.steps(); ++s) {
    for (std::size_t t = 0; t < log.terms.size(); ++t) {
      csv << s << ',' << log.epoch_of_step[s] << ',' << log.terms[t] << ',' << format_double(log.values[s][t]) << '\n';
    }
  }
  nlohmann::json summary;
  summary["terms"] = log.terms;
  summary["steps"] = log.steps();
  summary["epochs"] = log.epochs();
  summary["wall_seconds"] = log.wall_seconds;
  nlohmann::json per_epoch = nlohmann::json::array();
  for (int e = 0; e < log.epochs(); ++e) {
    nlohmann::json row;
    const auto means = log.epoch_means(e);
    for (std::size_t t = 0; t < log.terms.size(); ++t) row[log.terms[t]] = means[t];
    per_epoch.push_back(row);
  }
  summary["epoch_means"] = per_epoch;
  summary["extra"] = extra;
  std::ofstream js(dir / "train_summary.json");
  js << summary.dump(2) << '\n';
}

template <class T>
struct TrainResult {
  Model<T> model;
  TrainLog log;
};

// Raised when a loss or gradient goes non-finite. Carries the parameters at the end
// of the last completed epoch (the initial parameters if none completed).
template <class T>
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const NumericalError& cause, Model<T> last_good, TrainLog log, int epoch)
      : NumericalError(cause), last_good(std::move(last_good)), log(std::move(log)), epoch(epoch) {}
  Model<T> last_good;
  TrainLog log;
  int epoch;
};

template <class T>
using EpochCallback = std::function<void(int epoch, const Model<T>& model, const TrainLog& log)>;

namespace detail {

template <class T>
void check_loss(T v, const char* where) {
  if (!std::isfinite(v)) throw NumericalError(where, "non-finite loss");
}

template <class T>
void gather(const std::vector<Image>& images, const std::vector<std::size_t>& order, std::size_t begin,
            std::size_t end, nn::FeatureMap<T>& x) {
  const int rows = images.front().rows, cols = images.front().cols;
  const std::size_t px = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  x = nn::FeatureMap<T>(1, static_cast<int>(end - begin), rows, cols);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& src = images[order[i]].pixels;
    T* dst = x.data.data() + (i - begin) * px;
    for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<T>(src[p]);
  }
}

inline void check_training_data(const Dataset& data, const Architecture& arch) {
  if (data.images.empty()) throw ContractError("training set is empty");
  for (const auto& im : data.images) {
    if (im.rows != arch.image_size || im.cols != arch.image_size) {
      throw ContractError("training image is " + std::to_string(im.rows) + "x" + std::to_string(im.cols) +
                          ", architecture expects " + std::to_string(arch.image_size));
    }
  }
  std::size_t bad = 0;
  for (const auto& im : data.images) bad += count_non_finite(im.pixels);
  if (bad) throw DataIntegrityError("training set has non-finite pixels", bad);
}

// Shuffle/noise stream, independent of the initialization stream.
inline std::mt19937_64 training_stream(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x74726169u};
  return std::mt19937_64(seq);
}

template <class T>
void add_step(TrainLog& log, int epoch, std::initializer_list<T> v) {
  std::vector<double> row;
  for (T x : v) row.push_back(static_cast<double>(x));
  log.values.push_back(std::move(row));
  log.epoch_of_step.push_back(epoch);
}

template <class T, class Step>
TrainResult<T> run_epochs(const TrainConfig& cfg, const Dataset& data, const EpochCallback<T>& on_epoch, Step&& step) {
  cfg.validate();
  check_training_data(data, cfg.arch);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> res{Model<T>::initialized(cfg.kind, cfg.arch, cfg.seed), TrainLog{}};
  res.log.terms = log_terms(cfg.kind);
  ModelParameters<T> last_good = res.model.params;
  auto rng = training_stream(cfg.seed);
  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto b = static_cast<std::size_t>(cfg.hyper.batch_size);
  nn::FeatureMap<T> x;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += b) {
        gather(data.images, order, begin, std::min(order.size(), begin + b), x);
        step(res.model, x, rng, res.log, epoch);
      }
    } catch (const NumericalError& e) {
      Model<T> good = res.model;
      good.params = last_good;
      res.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      throw TrainingDiverged<T>(e, std::move(good), std::move(res.log), epoch);
    }
    last_good = res.model.params;
    if (on_epoch && cfg.checkpoint_every > 0 && ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
      on_epoch(epoch, res.model, res.log);
    }
  }
  res.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace detail

template <class T = float>
TrainResult<T> train_vae(const TrainConfig& cfg, const Dataset& data, const EpochCallback<T>& on_epoch = {}) {
  if (cfg.kind != ModelKind::vae) throw ConfigError("train_vae called with model kind " + to_string(cfg.kind));
  const auto& hp = cfg.hyper;
  std::unique_ptr<Adam<T>> enc_opt, dec_opt;
  ModelParameters<T> g;
  auto step = [&](Model<T>& m, const nn::FeatureMap<T>& x, std::mt19937_64& rng, TrainLog& log, int epoch) {
    if (!enc_opt) {
      enc_opt = std::make_unique<Adam<T>>(m.params.encoder.size(), hp.learning_rate, hp.beta1, hp.beta2);
      dec_opt = std::make_unique<Adam<T>>(m.params.decoder.size(), hp.learning_rate, hp.beta1, hp.beta2);
      g = detail::zero_like(m);
    }
    std::fill(g.encoder.begin(), g.encoder.end(), T(0));
    std::fill(g.decoder.begin(), g.decoder.end(), T(0));
    const Matrix<T> noise = standard_normal<T>(x.batch, m.latent_dim(), rng);
    const auto l = vae_loss_gradient(m, x, noise, static_cast<T>(hp.kl_weight), &g);
    detail::check_loss(l.total, "vae.loss");
    nn::require_finite(std::span<const T>(g.encoder), "encoder.gradient");
    nn::require_finite(std::span<const T>(g.decoder), "decoder.gradient");
    enc_opt->step(m.params.encoder, g.encoder);
    dec_opt->step(m.params.decoder, g.decoder);
    detail::add_step(log, epoch, {l.total, l.reconstruction, l.kl});
  };
  return detail::run_epochs<T>(cfg, data, on_epoch, step);
}

// One iteration per batch: n_critic critic updates against the batch's encoder
// codes (fresh prior samples and interpolation weights each time), then a
// reconstruction update of encoder and decoder, then an adversarial encoder update.
// The logged critic terms are means over the critic updates of the iteration.
template <class T = float>
TrainResult<T> train_aae(const TrainConfig& cfg, const Dataset& data, const EpochCallback<T>& on_epoch = {}) {
  if (cfg.kind != ModelKind::aae) throw ConfigError("train_aae called with model kind " + to_string(cfg.kind));
  const auto& hp = cfg.hyper;
  std::unique_ptr<Adam<T>> enc_opt, dec_opt, adv_opt, crit_opt;
  ModelParameters<T> g;
  auto zero = [](nn::Buffer<T>& v) { std::fill(v.begin(), v.end(), T(0)); };
  auto step = [&](Model<T>& m, const nn::FeatureMap<T>& x, std::mt19937_64& rng, TrainLog& log, int epoch) {
    if (!enc_opt) {
      enc_opt = std::make_unique<Adam<T>>(m.params.encoder.size(), hp.learning_rate, hp.beta1, hp.beta2);
      dec_opt = std::make_unique<Adam<T>>(m.params.decoder.size(), hp.learning_rate, hp.beta1, hp.beta2);
      adv_opt = std::make_unique<Adam<T>>(m.params.encoder.size(), hp.learning_rate, hp.beta1, hp.beta2);
      crit_opt = std::make_unique<Adam<T>>(m.params.critic.size(), hp.critic_learning_rate, hp.beta1, hp.beta2);
      g = detail::zero_like(m);
    }
    const Eigen::Index n = x.batch;
    const int dz = m.latent_dim();
    const Matrix<T> z_fake = m.nets.encoder.forward(m.enc(), x, nullptr);
    nn::require_finite(std::span<const T>(z_fake.data(), static_cast<std::size_t>(z_fake.size())), "encoder.output");

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    T c_total = T(0), c_w = T(0), c_gp = T(0);
    for (int k = 0; k < hp.n_critic; ++k) {
      const Matrix<T> prior = standard_normal<T>(n, dz, rng);
      Vector<T> eps(n);
      for (Eigen::Index i = 0; i < n; ++i) eps(i) = static_cast<T>(unit(rng));
      zero(g.critic);
      const auto c = critic_loss_gradient(m, hp, z_fake, prior, eps, &g);
      detail::check_loss(c.total, "critic.loss");
      nn::require_finite(std::span<const T>(g.critic), "critic.gradient");
      crit_opt->step(m.params.critic, g.critic);
      c_total += c.total;
      c_w += c.wasserstein;
      c_gp += c.gradient_penalty;
    }
    const T inv_k = T(1) / static_cast<T>(hp.n_critic);

    zero(g.encoder);
    zero(g.decoder);
    const auto ae = autoencoder_loss_gradient(m, hp, x, &g);
    detail::check_loss(ae.total, "autoencoder.loss");
    nn::require_finite(std::span<const T>(g.encoder), "encoder.gradient");
    nn::require_finite(std::span<const T>(g.decoder), "decoder.gradient");
    enc_opt->step(m.params.encoder, g.encoder);
    dec_opt->step(m.params.decoder, g.decoder);

    zero(g.encoder);
    const T adv = encoder_adversarial_gradient(m, x, &g);
    detail::check_loss(adv, "encoder_adversarial.loss");
    nn::require_finite(std::span<const T>(g.encoder), "encoder.gradient");
    adv_opt->step(m.params.encoder, g.encoder);

    detail::add_step(log, epoch,
                     {ae.total, ae.reconstruction, ae.latent_consistency, c_total * inv_k, c_w * inv_k, c_gp * inv_k,
                      adv});
  };
  return detail::run_epochs<T>(cfg, data, on_epoch, step);
}

template <class T = float>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& data, const EpochCallback<T>& on_epoch = {}) {
  return cfg.kind == ModelKind::vae ? train_vae<T>(cfg, data, on_epoch) : train_aae<T>(cfg, data, on_epoch);
}

}  // namespace lcae
