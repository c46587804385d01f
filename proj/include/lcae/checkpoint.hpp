#pragma once

// Checkpoint file:
//   8 bytes   magic "LCAECKPT"
//   uint32    format version
//   uint64    header length in bytes
//   header    JSON: kind, architecture, hyperparameters, dtype, section sizes, meta
//   payload   encoder, decoder and critic weights, little-endian, in that order

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <type_traits>

#include "lcae/model.hpp"

namespace lcae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const Architecture& a) {
  return {{"image_size", a.image_size},           {"channels", a.channels},
          {"latent_dim", a.latent_dim},           {"critic_width", a.critic_width},
          {"critic_depth", a.critic_depth},       {"leaky_slope", a.leaky_slope},
          {"critic_activation", nn::to_string(a.critic_activation)}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.image_size = j.at("image_size").get<int>();
  a.channels = j.at("channels").get<std::vector<int>>();
  a.latent_dim = j.at("latent_dim").get<int>();
  a.critic_width = j.at("critic_width").get<int>();
  a.critic_depth = j.at("critic_depth").get<int>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  a.critic_activation = nn::activation_from_string(j.at("critic_activation").get<std::string>());
  return a;
}

inline nlohmann::json to_json(const Hyperparameters& h) {
  return {{"lambda_lc", h.lambda_lc},
          {"lambda_gp", h.lambda_gp},
          {"kl_weight", h.kl_weight},
          {"learning_rate", h.learning_rate},
          {"critic_learning_rate", h.critic_learning_rate},
          {"beta1", h.beta1},
          {"beta2", h.beta2},
          {"batch_size", h.batch_size},
          {"n_critic", h.n_critic},
          {"stop_gradient_at_reconstruction", h.stop_gradient_at_reconstruction}};
}

inline Hyperparameters hyperparameters_from_json(const nlohmann::json& j) {
  Hyperparameters h;
  h.lambda_lc = j.at("lambda_lc").get<double>();
  h.lambda_gp = j.at("lambda_gp").get<double>();
  h.kl_weight = j.at("kl_weight").get<double>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.critic_learning_rate = j.at("critic_learning_rate").get<double>();
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.batch_size = j.at("batch_size").get<int>();
  h.n_critic = j.at("n_critic").get<int>();
  h.stop_gradient_at_reconstruction = j.at("stop_gradient_at_reconstruction").get<bool>();
  return h;
}

template <class T>
struct Checkpoint {
  Model<T> model;
  Hyperparameters hyper;
  nlohmann::json meta = nlohmann::json::object();
};

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else return "float64";
}

template <class T>
void save_checkpoint(const Model<T>& model, const Hyperparameters& hyper, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  nlohmann::json h;
  h["format"] = "lcae-checkpoint";
  h["kind"] = to_string(model.kind);
  h["architecture"] = to_json(model.arch);
  h["hyperparameters"] = to_json(hyper);
  h["dtype"] = dtype_name<T>();
  h["sections"] = {{{"name", "encoder"}, {"count", model.params.encoder.size()}},
                   {{"name", "decoder"}, {"count", model.params.decoder.size()}},
                   {{"name", "critic"}, {"count", model.params.critic.size()}}};
  h["meta"] = meta;
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  out.write("LCAECKPT", 8);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto* section : {&model.params.encoder, &model.params.decoder, &model.params.critic}) {
    out.write(reinterpret_cast<const char*>(section->data()), static_cast<std::streamsize>(section->size() * sizeof(T)));
  }
  if (!out) throw IngestionError("short write to " + path.string());
}

namespace detail {

template <class Stored, class T>
void read_section(std::ifstream& in, nn::Buffer<T>& dst, std::size_t count, const std::string& path) {
  std::vector<Stored> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(Stored)));
  if (!in) throw IngestionError(path + ": truncated checkpoint payload");
  dst.resize(count);
  for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<T>(buf[i]);
}

}  // namespace detail

// Rebuilds the networks from the stored descriptor and checks every section size
// against them.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "LCAECKPT", 8) != 0) throw IngestionError(path.string() + ": not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != kCheckpointVersion) throw IngestionError(path.string() + ": unsupported checkpoint version");
  if (len > (1u << 26)) throw IngestionError(path.string() + ": implausible header length");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw IngestionError(path.string() + ": truncated header");

  nlohmann::json h;
  ModelKind kind;
  Architecture arch;
  Hyperparameters hyper;
  std::string dtype;
  try {
    h = nlohmann::json::parse(header);
    kind = model_kind_from_string(h.at("kind").get<std::string>());
    arch = architecture_from_json(h.at("architecture"));
    hyper = hyperparameters_from_json(h.at("hyperparameters"));
    dtype = h.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": bad checkpoint header: " + e.what());
  }
  Checkpoint<T> ck{Model<T>(kind, arch), hyper, h.value("meta", nlohmann::json::object())};
  const std::size_t expected[3] = {ck.model.nets.encoder_layout.size(), ck.model.nets.decoder_layout.size(),
                                   ck.model.nets.critic_layout.size()};
  nn::Buffer<T>* targets[3] = {&ck.model.params.encoder, &ck.model.params.decoder, &ck.model.params.critic};
  const auto& sections = h.at("sections");
  if (sections.size() != 3) throw IngestionError(path.string() + ": expected 3 weight sections");
  for (int s = 0; s < 3; ++s) {
    const auto count = sections[s].at("count").get<std::size_t>();
    if (count != expected[s]) {
      throw ContractError(path.string() + ": section '" + sections[s].at("name").get<std::string>() + "' has " +
                          std::to_string(count) + " weights, architecture requires " + std::to_string(expected[s]));
    }
    if (dtype == "float32") detail::read_section<float>(in, *targets[s], count, path.string());
    else if (dtype == "float64") detail::read_section<double>(in, *targets[s], count, path.string());
    else throw IngestionError(path.string() + ": unknown dtype " + dtype);
    for (T v : *targets[s]) {
      if (!std::isfinite(v)) throw DataIntegrityError(path.string() + ": non-finite weight", 1);
    }
  }
  return ck;
}

}  // namespace lcae
