#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coda/container.hpp"
#include "coda/systems.hpp"

namespace coda::io {

/**
 * @brief Serialize one split (several environments) into a container.
 *
 * Header fields: system kind and fixed constants, dt, horizon, state
 * shape, split, seed, and an environment list carrying p^e plus the byte
 * offset/length of each env's trajectory block relative to payload start.
 */
[[nodiscard]] inline std::string encode_datasets(const systems::SystemSpec& spec,
                                                 const std::vector<systems::EnvironmentDataset>& sets,
                                                 systems::Split split, std::uint64_t seed) {
  nlohmann::json constants;
  switch (spec.kind) {
    case systems::SystemKind::lv:
      constants = {{"alpha", spec.lv.alpha}, {"gamma", spec.lv.gamma}};
      break;
    case systems::SystemKind::go:
      constants = {{"J0", spec.go.j0},      {"k2", spec.go.k2}, {"k3", spec.go.k3},
                   {"k4", spec.go.k4},      {"k5", spec.go.k5}, {"k6", spec.go.k6},
                   {"q", spec.go.q},        {"N", spec.go.n_total}, {"A", spec.go.a_total},
                   {"kappa", spec.go.kappa}, {"psi", spec.go.psi}, {"k", spec.go.k_out}};
      break;
    case systems::SystemKind::gs:
      constants = {{"Du", spec.gs.du}, {"Dv", spec.gs.dv}, {"dx", spec.dx}};
      break;
  }

  Container c;
  c.header["kind"] = "dataset";
  c.header["system"] = systems::kind_name(spec.kind);
  c.header["constants"] = constants;
  c.header["dt"] = spec.dt;
  c.header["dt_internal"] = spec.dt_internal;
  c.header["horizon"] = spec.horizon;
  c.header["state_shape"] = spec.state_shape();
  c.header["split"] = systems::split_name(split);
  c.header["seed"] = seed;

  nlohmann::json env_list = nlohmann::json::array();
  std::vector<double> payload;
  std::size_t offset_bytes = 0;
  for (const auto& ds : sets) {
    std::size_t env_len = 0;
    for (const auto& traj : ds.trajectories) env_len += traj.states.numel();
    nlohmann::json e;
    e["id"] = ds.env.id;
    e["p"] = ds.env.params;
    e["n_trajectories"] = ds.trajectories.size();
    e["offset"] = offset_bytes;
    e["length"] = env_len * sizeof(double);
    env_list.push_back(std::move(e));
    for (const auto& traj : ds.trajectories) {
      payload.insert(payload.end(), traj.states.data.begin(), traj.states.data.end());
    }
    offset_bytes += env_len * sizeof(double);
  }
  c.header["environments"] = std::move(env_list);
  c.blocks.push_back(std::move(payload));
  return encode(c);
}

struct DatasetFile {
  systems::SystemSpec spec;
  systems::Split split = systems::Split::train;
  std::uint64_t seed = 0;
  std::vector<systems::EnvironmentDataset> sets;
};

[[nodiscard]] inline DatasetFile decode_datasets(const std::string& bytes) {
  const Container c = decode(bytes);
  const auto& h = c.header;
  if (h.value("kind", "") != "dataset") throw FormatError("not a dataset container");

  DatasetFile file;
  file.spec = systems::SystemSpec::make(systems::kind_from_name(h.at("system").get<std::string>()));
  file.spec.dt = h.at("dt").get<double>();
  file.spec.horizon = h.at("horizon").get<double>();
  if (h.contains("dt_internal")) file.spec.dt_internal = h.at("dt_internal").get<double>();
  file.split = systems::split_from_name(h.at("split").get<std::string>());
  file.seed = h.at("seed").get<std::uint64_t>();

  const Shape state_shape = h.at("state_shape").get<Shape>();
  const std::size_t frame_len = shape_numel(state_shape);
  const std::size_t n_frames = static_cast<std::size_t>(file.spec.observation_steps()) + 1;
  const auto& payload = c.blocks.at(0);

  for (const auto& e : h.at("environments")) {
    systems::EnvironmentDataset ds;
    ds.env.id = e.at("id").get<std::string>();
    ds.env.params = e.at("p").get<std::vector<double>>();
    ds.split = file.split;
    ds.dt = file.spec.dt;
    ds.horizon = file.spec.horizon;
    ds.state_shape = state_shape;
    const std::size_t n_traj = e.at("n_trajectories").get<std::size_t>();
    const std::size_t offset = e.at("offset").get<std::size_t>() / sizeof(double);
    const std::size_t length = e.at("length").get<std::size_t>() / sizeof(double);
    if (offset + length > payload.size() || length != n_traj * n_frames * frame_len) {
      throw FormatError("dataset block for env " + ds.env.id + " is inconsistent");
    }
    Shape traj_shape = state_shape;
    traj_shape.insert(traj_shape.begin(), n_frames);
    for (std::size_t t = 0; t < n_traj; ++t) {
      const std::size_t begin = offset + t * n_frames * frame_len;
      std::vector<double> data(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                               payload.begin() + static_cast<std::ptrdiff_t>(begin + n_frames * frame_len));
      ds.trajectories.push_back(systems::Trajectory{ds.env.id, Tensor(traj_shape, std::move(data)),
                                                    file.spec.dt});
    }
    file.sets.push_back(std::move(ds));
  }
  return file;
}

}  // namespace coda::io
