#pragma once

#include <string>
#include <vector>

#include "coda/container.hpp"
#include "coda/hypernet.hpp"
#include "coda/model.hpp"
#include "coda/systems.hpp"

namespace coda::io {

/// Per-environment record carried by a checkpoint.
struct CheckpointEnv {
  std::string id;
  std::vector<double> params;
  std::string split;       // "train" or "adapt"
  double final_loss = -1.0;
  int iterations = -1;
};

struct Checkpoint {
  model::ModelConfig model;
  hypernet::PenaltyConfig penalty;
  systems::SystemKind system = systems::SystemKind::lv;
  bool erm = false;  // ERM baseline: theta_c only, no decoder
  hypernet::HyperParams hyper;
  std::vector<CheckpointEnv> envs;  // aligned with hyper.contexts order
};

[[nodiscard]] inline nlohmann::json model_config_json(const model::ModelConfig& m) {
  return {{"arch", m.arch == model::Arch::mlp ? "mlp" : "conv2d"},
          {"state_shape", m.state_shape},
          {"hidden", m.hidden},
          {"depth", m.depth},
          {"kernel", m.kernel},
          {"activation", m.activation == model::Activation::swish ? "swish" : "identity"}};
}

[[nodiscard]] inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig m;
  const std::string arch = j.at("arch").get<std::string>();
  if (arch == "mlp") {
    m.arch = model::Arch::mlp;
  } else if (arch == "conv2d") {
    m.arch = model::Arch::conv2d;
  } else {
    throw FormatError("unknown arch '" + arch + "'");
  }
  m.state_shape = j.at("state_shape").get<Shape>();
  m.hidden = j.at("hidden").get<std::size_t>();
  m.depth = j.at("depth").get<std::size_t>();
  m.kernel = j.at("kernel").get<std::size_t>();
  m.activation = j.at("activation").get<std::string>() == "identity" ? model::Activation::identity
                                                                     : model::Activation::swish;
  m.validate();
  return m;
}

[[nodiscard]] inline std::string encode_checkpoint(const Checkpoint& ck) {
  Container c;
  c.header["kind"] = "checkpoint";
  c.header["system"] = systems::kind_name(ck.system);
  c.header["erm"] = ck.erm;
  c.header["model"] = model_config_json(ck.model);
  c.header["penalty"] = {{"variant", hypernet::variant_name(ck.penalty.variant)},
                         {"lambda_xi", ck.penalty.lambda_xi},
                         {"lambda_omega", ck.penalty.lambda_omega}};
  c.header["d_theta"] = ck.hyper.theta_c.size();
  c.header["d_xi"] = ck.hyper.d_xi;

  std::vector<double> payload = ck.hyper.theta_c;
  payload.insert(payload.end(), ck.hyper.w.begin(), ck.hyper.w.end());

  nlohmann::json env_list = nlohmann::json::array();
  if (ck.envs.size() != ck.hyper.contexts.size()) {
    throw ConfigError("checkpoint: env metadata and contexts misaligned");
  }
  std::size_t offset = (ck.hyper.theta_c.size() + ck.hyper.w.size()) * sizeof(double);
  for (std::size_t i = 0; i < ck.envs.size(); ++i) {
    const auto& env = ck.envs[i];
    const auto& [ctx_id, xi] = ck.hyper.contexts[i];
    if (ctx_id != env.id) throw ConfigError("checkpoint: env order mismatch at " + env.id);
    nlohmann::json e;
    e["id"] = env.id;
    e["p"] = env.params;
    e["split"] = env.split;
    e["offset"] = offset;
    if (env.final_loss >= 0.0) e["final_loss"] = env.final_loss;
    if (env.iterations >= 0) e["iterations"] = env.iterations;
    env_list.push_back(std::move(e));
    payload.insert(payload.end(), xi.begin(), xi.end());
    offset += xi.size() * sizeof(double);
  }
  c.header["environments"] = std::move(env_list);
  c.blocks.push_back(std::move(payload));
  return encode(c);
}

[[nodiscard]] inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const Container c = decode(bytes);
  const auto& h = c.header;
  if (h.value("kind", "") != "checkpoint") throw FormatError("not a checkpoint container");

  Checkpoint ck;
  ck.system = systems::kind_from_name(h.at("system").get<std::string>());
  ck.erm = h.value("erm", false);
  ck.model = model_config_from_json(h.at("model"));
  ck.penalty.variant = hypernet::variant_from_name(h.at("penalty").at("variant").get<std::string>());
  ck.penalty.lambda_xi = h.at("penalty").at("lambda_xi").get<double>();
  ck.penalty.lambda_omega = h.at("penalty").at("lambda_omega").get<double>();

  const std::size_t d_theta = h.at("d_theta").get<std::size_t>();
  const std::size_t d_xi = h.at("d_xi").get<std::size_t>();
  const auto& payload = c.blocks.at(0);
  if (payload.size() < d_theta * (1 + d_xi)) throw FormatError("checkpoint payload truncated");

  ck.hyper.d_xi = d_xi;
  ck.hyper.theta_c.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(d_theta));
  ck.hyper.w.assign(payload.begin() + static_cast<std::ptrdiff_t>(d_theta),
                    payload.begin() + static_cast<std::ptrdiff_t>(d_theta * (1 + d_xi)));

  for (const auto& e : h.at("environments")) {
    CheckpointEnv env;
    env.id = e.at("id").get<std::string>();
    env.params = e.at("p").get<std::vector<double>>();
    env.split = e.at("split").get<std::string>();
    env.final_loss = e.value("final_loss", -1.0);
    env.iterations = e.value("iterations", -1);
    const std::size_t off = e.at("offset").get<std::size_t>() / sizeof(double);
    if (off + d_xi > payload.size()) throw FormatError("checkpoint context out of range");
    std::vector<double> xi(payload.begin() + static_cast<std::ptrdiff_t>(off),
                           payload.begin() + static_cast<std::ptrdiff_t>(off + d_xi));
    ck.hyper.contexts.emplace_back(env.id, std::move(xi));
    ck.envs.push_back(std::move(env));
  }
  ck.hyper.validate();
  return ck;
}

}  // namespace coda::io
