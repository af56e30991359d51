#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cssgr/config.hpp"
#include "cssgr/model.hpp"
#include "cssgr/optim.hpp"

// Versioned JSON checkpoints: run configuration, every named parameter as a
// flat array plus its shape, the training step counter, and the optimizer
// moment buffers. Doubles serialize in shortest round-trip form, so a
// save/load cycle reproduces bit-identical forward passes.

namespace cssgr {

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const CssgrModel& model,
                            const RunConfig& config, const Adam* optimizer = nullptr) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = config.to_json();
  j["step"] = optimizer ? optimizer->step_count() : 0;
  nlohmann::json params = nlohmann::json::object();
  for (const NamedParam& p : model.all_parameters()) {
    params[p.name] = {{"shape", p.tensor.shape()}, {"data", p.tensor.data()}};
  }
  j["parameters"] = std::move(params);
  if (optimizer) {
    nlohmann::json moments = nlohmann::json::object();
    for (const auto& [name, mom] : optimizer->moments())
      moments[name] = {{"m", mom.m}, {"v", mom.v}};
    j["optimizer"] = {{"step", optimizer->step_count()}, {"moments", std::move(moments)}};
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot open for writing: " + path);
  out << j.dump() << "\n";
  if (!out) fail("io", "write failed: " + path);
}

struct LoadedCheckpoint {
  RunConfig config;
  CssgrModel model;
  std::uint64_t step = 0;
  bool has_optimizer = false;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, Adam::Moments> moments;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io", "cannot open checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail("io", "invalid JSON in checkpoint: " + path);
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kCheckpointVersion)
    fail("io", "unsupported checkpoint format version in " + path);

  RunConfig config = RunConfig::from_json(j.at("config"));
  LoadedCheckpoint loaded{config, CssgrModel(config.model_config(), config.seed)};

  try {
    const nlohmann::json& params = j.at("parameters");
    for (const NamedParam& p : loaded.model.all_parameters()) {
      if (!params.contains(p.name))
        fail("io", "checkpoint missing parameter '" + p.name + "'");
      const nlohmann::json& entry = params.at(p.name);
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != p.tensor.shape())
        fail("io", "checkpoint parameter '" + p.name + "' has shape " + shape_str(shape) +
                       ", expected " + shape_str(p.tensor.shape()));
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      if (data.size() != p.tensor.numel())
        fail("io", "checkpoint parameter '" + p.name + "' has wrong element count");
      const_cast<Tensor&>(p.tensor).data() = std::move(data);
    }
    loaded.step = j.value("step", std::uint64_t{0});
    if (j.contains("optimizer")) {
      loaded.has_optimizer = true;
      loaded.optimizer_step = j.at("optimizer").at("step").get<std::uint64_t>();
      for (const auto& [name, mom] : j.at("optimizer").at("moments").items()) {
        Adam::Moments m;
        m.m = mom.at("m").get<std::vector<double>>();
        m.v = mom.at("v").get<std::vector<double>>();
        loaded.moments[name] = std::move(m);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail("io", std::string("malformed checkpoint: ") + e.what());
  }
  return loaded;
}

}  // namespace cssgr
