#pragma once

// Experiment configuration. A JSON document is merged over built-in defaults, then
// `key.path=value` overrides are applied (defaults < file < flags). Every key must
// already exist in the defaults and keep its JSON type.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lcae/checkpoint.hpp"
#include "lcae/evaluation.hpp"
#include "lcae/phantom.hpp"
#include "lcae/training.hpp"
#include "lcae/tsne.hpp"

namespace lcae {

inline constexpr const char* kOutputRootVariable = "LCAE_OUTPUT_ROOT";

inline nlohmann::json default_config() {
  const Architecture a;
  const Hyperparameters h;
  const PhantomSpec p;
  const auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
  return {
      {"seed", 0},
      {"output_dir", "runs"},
      {"phantom",
       {{"n_train", 2000},
        {"n_test", 200},
        {"size", p.size},
        {"semi_major", range(p.semi_major)},
        {"semi_minor", range(p.semi_minor)},
        {"orientation", range(p.orientation)},
        {"center_shift", range(p.center_shift)},
        {"slice_level", range(p.slice_level)},
        {"texture_amplitude", range(p.texture_amplitude)},
        {"rim_contrast", range(p.rim_contrast)},
        {"anomaly_radius", range(p.anomaly.radius)},
        {"anomaly_offset", range(p.anomaly.offset)}}},
      {"volumes", {{"train", nlohmann::json::array()}, {"test", nlohmann::json::array()},
                   {"test_masks", nlohmann::json::array()}}},
      {"preprocess",
       {{"axis", 2},
        {"slice_range", nullptr},
        {"min_foreground", 0.05},
        {"image_size", 32},
        {"histogram_normalize", true},
        {"nonzero_statistics", true}}},
      {"model",
       {{"kind", "aae"},
        {"image_size", a.image_size},
        {"channels", a.channels},
        {"latent_dim", a.latent_dim},
        {"critic_width", a.critic_width},
        {"critic_depth", a.critic_depth},
        {"leaky_slope", a.leaky_slope},
        {"critic_activation", nn::to_string(a.critic_activation)}}},
      {"training",
       {{"epochs", 200},
        {"batch_size", h.batch_size},
        {"learning_rate", h.learning_rate},
        {"critic_learning_rate", h.critic_learning_rate},
        {"beta1", h.beta1},
        {"beta2", h.beta2},
        {"n_critic", h.n_critic},
        {"lambda_lc", h.lambda_lc},
        {"lambda_gp", h.lambda_gp},
        {"kl_weight", h.kl_weight},
        {"stop_gradient_at_reconstruction", h.stop_gradient_at_reconstruction},
        {"checkpoint_every", 0}}},
      {"evaluation", {{"interval", "percentile"}, {"histogram_bins", 50}, {"panels", true}, {"max_panels", -1}}},
      {"embedding", {{"perplexity", 30.0}, {"iterations", 1000}, {"prior_samples", 200}, {"max_per_set", 200}}},
  };
}

namespace detail {

inline bool compatible(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_null()) return v.is_null() || v.is_array();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_array() && v.is_array()) return true;
  if (def.is_object()) return v.is_object();
  if (v.is_null()) return false;
  return def.type() == v.type();
}

inline const char* type_name(const nlohmann::json& def) {
  if (def.is_null()) return "array or null";
  if (def.is_number_integer()) return "integer";
  return def.type_name();
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& over, const nlohmann::json& defaults,
                       const std::string& prefix) {
  if (!over.is_object()) throw ConfigError("config" + (prefix.empty() ? "" : " key '" + prefix + "'") + " must be an object");
  for (const auto& [key, value] : over.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const auto& def = defaults.at(key);
    if (!compatible(def, value)) {
      throw ConfigError("config key '" + path + "' must be " + type_name(def) + ", got " + value.type_name());
    }
    if (def.is_object()) merge_into(base[key], value, def, path);
    else base[key] = value;
  }
}

}  // namespace detail

struct ExperimentConfig {
  nlohmann::json values = default_config();

  static ExperimentConfig from_json(const nlohmann::json& doc) {
    ExperimentConfig c;
    detail::merge_into(c.values, doc, default_config(), "");
    c.validate();
    return c;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(doc);
  }

  // `key.path=value`; the value is parsed as JSON and falls back to a plain string.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
    detail::merge_into(values, patch, default_config(), "");
    validate();
  }

  const nlohmann::json& at(const std::string& dotted) const {
    const nlohmann::json* j = &values;
    std::string rest = dotted;
    for (;;) {
      const auto p = rest.find('.');
      j = &j->at(rest.substr(0, p));
      if (p == std::string::npos) return *j;
      rest = rest.substr(p + 1);
    }
  }

  std::uint64_t seed() const { return values.at("seed").get<std::uint64_t>(); }

  ModelKind model_kind() const { return model_kind_from_string(at("model.kind").get<std::string>()); }

  Architecture architecture() const {
    const auto& m = values.at("model");
    Architecture a;
    a.image_size = m.at("image_size").get<int>();
    a.channels = m.at("channels").get<std::vector<int>>();
    a.latent_dim = m.at("latent_dim").get<int>();
    a.critic_width = m.at("critic_width").get<int>();
    a.critic_depth = m.at("critic_depth").get<int>();
    a.leaky_slope = m.at("leaky_slope").get<double>();
    a.critic_activation = nn::activation_from_string(m.at("critic_activation").get<std::string>());
    return a;
  }

  Hyperparameters hyperparameters() const {
    const auto& t = values.at("training");
    Hyperparameters h;
    h.lambda_lc = t.at("lambda_lc").get<double>();
    h.lambda_gp = t.at("lambda_gp").get<double>();
    h.kl_weight = t.at("kl_weight").get<double>();
    h.learning_rate = t.at("learning_rate").get<double>();
    h.critic_learning_rate = t.at("critic_learning_rate").get<double>();
    h.beta1 = t.at("beta1").get<double>();
    h.beta2 = t.at("beta2").get<double>();
    h.batch_size = t.at("batch_size").get<int>();
    h.n_critic = t.at("n_critic").get<int>();
    h.stop_gradient_at_reconstruction = t.at("stop_gradient_at_reconstruction").get<bool>();
    return h;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.kind = model_kind();
    c.arch = architecture();
    c.hyper = hyperparameters();
    c.epochs = at("training.epochs").get<int>();
    c.seed = seed();
    c.checkpoint_every = at("training.checkpoint_every").get<int>();
    return c;
  }

  PhantomSpec phantom() const {
    const auto& p = values.at("phantom");
    const auto range = [&](const char* k) {
      const auto v = p.at(k).get<std::vector<double>>();
      if (v.size() != 2) throw ConfigError(std::string("phantom.") + k + " must be [lo, hi]");
      return Range{v[0], v[1]};
    };
    PhantomSpec s;
    s.seed = seed();
    s.n_images = p.at("n_train").get<int>();
    s.size = p.at("size").get<int>();
    s.semi_major = range("semi_major");
    s.semi_minor = range("semi_minor");
    s.orientation = range("orientation");
    s.center_shift = range("center_shift");
    s.slice_level = range("slice_level");
    s.texture_amplitude = range("texture_amplitude");
    s.rim_contrast = range("rim_contrast");
    s.anomaly.radius = range("anomaly_radius");
    s.anomaly.offset = range("anomaly_offset");
    return s;
  }

  IntervalKind interval() const { return interval_kind_from_string(at("evaluation.interval").get<std::string>()); }

  TsneOptions tsne_options() const {
    TsneOptions o;
    o.perplexity = at("embedding.perplexity").get<double>();
    o.iterations = at("embedding.iterations").get<int>();
    o.seed = seed();
    return o;
  }

  // Relative output directories are placed under $LCAE_OUTPUT_ROOT when it is set.
  std::filesystem::path output_dir() const {
    std::filesystem::path out = at("output_dir").get<std::string>();
    if (out.is_relative()) {
      if (const char* root = std::getenv(kOutputRootVariable); root && *root) out = std::filesystem::path(root) / out;
    }
    return out;
  }

  void validate() const {
    try {
      const auto tc = train_config();
      tc.validate();
      phantom().validate();
      if (at("phantom.n_train").get<int>() < 1 || at("phantom.n_test").get<int>() < 1) {
        throw ConfigError("phantom split sizes must be >= 1");
      }
      const int axis = at("preprocess.axis").get<int>();
      if (axis < 0 || axis > 2) throw ConfigError("preprocess.axis must be 0, 1 or 2");
      const auto& sr = at("preprocess.slice_range");
      if (!sr.is_null() && sr.size() != 2) throw ConfigError("preprocess.slice_range must be [first, last] or null");
      const double mf = at("preprocess.min_foreground").get<double>();
      if (!(mf >= 0.0 && mf <= 1.0)) throw ConfigError("preprocess.min_foreground must be in [0, 1]");
      if (at("preprocess.image_size").get<int>() != tc.arch.image_size) {
        throw ConfigError("preprocess.image_size must equal model.image_size");
      }
      (void)interval();
      if (at("evaluation.histogram_bins").get<int>() < 1) throw ConfigError("evaluation.histogram_bins must be >= 1");
      if (at("embedding.prior_samples").get<int>() < 0) throw ConfigError("embedding.prior_samples must be >= 0");
      if (!(at("embedding.perplexity").get<double>() > 0.0)) throw ConfigError("embedding.perplexity must be > 0");
      if (at("embedding.iterations").get<int>() < 0) throw ConfigError("embedding.iterations must be >= 0");
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  void write_snapshot(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json");
    if (!out) throw IngestionError("cannot write " + (dir / "config.json").string());
    out << values.dump(2) << '\n';
  }
};

}  // namespace lcae
