#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cssgr/data.hpp"
#include "cssgr/error.hpp"
#include "cssgr/model.hpp"

// Run configuration: model size, optimization schedule, dataset paths, and
// the synthetic-task generator settings, with JSON (de)serialization.

namespace cssgr {

struct RunConfig {
  // model
  std::size_t d = 32;
  std::size_t layers = 2;
  double tau = 0.5;
  std::size_t vocab_size = 64;
  std::size_t max_len = 16;
  std::size_t decoder_blocks = 2;
  std::size_t decoder_heads = 4;
  std::size_t max_memory_rows = 16;
  std::string ablation = "full";

  // optimization
  double learning_rate = 1e-4;
  double lr_decay_factor = 0.5;
  std::size_t lr_decay_every_epochs = 5;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  // data
  std::string train_path = "train.jsonl";
  std::string eval_path = "eval.jsonl";
  GeneratorConfig generator;

  // The generator shares the vocabulary and decoder budget with the model;
  // the top-level values are authoritative.
  void sync_generator() {
    generator.vocab_size = vocab_size;
    generator.max_len = max_len;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.d = d;
    m.layers = layers;
    m.tau = tau;
    m.vocab_size = vocab_size;
    m.max_len = max_len;
    m.d_raw = generator.topics;
    m.decoder_blocks = decoder_blocks;
    m.decoder_heads = decoder_heads;
    m.max_memory_rows = max_memory_rows;
    m.mode = ablation_from_string(ablation);
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["d"] = d;
    j["layers"] = layers;
    j["tau"] = tau;
    j["vocab_size"] = vocab_size;
    j["max_len"] = max_len;
    j["decoder_blocks"] = decoder_blocks;
    j["decoder_heads"] = decoder_heads;
    j["max_memory_rows"] = max_memory_rows;
    j["ablation"] = ablation;
    j["learning_rate"] = learning_rate;
    j["lr_decay_factor"] = lr_decay_factor;
    j["lr_decay_every_epochs"] = lr_decay_every_epochs;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["train_path"] = train_path;
    j["eval_path"] = eval_path;
    j["generator"] = {{"num_train", generator.num_train},
                      {"num_eval", generator.num_eval},
                      {"topics", generator.topics},
                      {"min_text_segments", generator.min_text_segments},
                      {"max_text_segments", generator.max_text_segments},
                      {"min_visual_segments", generator.min_visual_segments},
                      {"max_visual_segments", generator.max_visual_segments},
                      {"min_segment_tokens", generator.min_segment_tokens},
                      {"max_segment_tokens", generator.max_segment_tokens},
                      {"visual_noise", generator.visual_noise}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      auto take = [&j](const char* key, auto& into) {
        if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
      };
      take("d", c.d);
      take("layers", c.layers);
      take("tau", c.tau);
      take("vocab_size", c.vocab_size);
      take("max_len", c.max_len);
      take("decoder_blocks", c.decoder_blocks);
      take("decoder_heads", c.decoder_heads);
      take("max_memory_rows", c.max_memory_rows);
      take("ablation", c.ablation);
      take("learning_rate", c.learning_rate);
      take("lr_decay_factor", c.lr_decay_factor);
      take("lr_decay_every_epochs", c.lr_decay_every_epochs);
      take("epochs", c.epochs);
      take("batch_size", c.batch_size);
      take("seed", c.seed);
      take("train_path", c.train_path);
      take("eval_path", c.eval_path);
      if (j.contains("generator")) {
        const nlohmann::json& g = j.at("generator");
        auto takeg = [&g](const char* key, auto& into) {
          if (g.contains(key)) into = g.at(key).get<std::decay_t<decltype(into)>>();
        };
        takeg("num_train", c.generator.num_train);
        takeg("num_eval", c.generator.num_eval);
        takeg("topics", c.generator.topics);
        takeg("min_text_segments", c.generator.min_text_segments);
        takeg("max_text_segments", c.generator.max_text_segments);
        takeg("min_visual_segments", c.generator.min_visual_segments);
        takeg("max_visual_segments", c.generator.max_visual_segments);
        takeg("min_segment_tokens", c.generator.min_segment_tokens);
        takeg("max_segment_tokens", c.generator.max_segment_tokens);
        takeg("visual_noise", c.generator.visual_noise);
      }
    } catch (const nlohmann::json::exception& e) {
      fail("config", std::string("malformed run config: ") + e.what());
    }
    (void)ablation_from_string(c.ablation);  // validate early
    c.sync_generator();
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io", "cannot open config: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) fail("config", "invalid JSON in config: " + path);
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io", "cannot open for writing: " + path);
    out << to_json().dump(2) << "\n";
  }

  // FNV-1a over the canonical (key-sorted) JSON text.
  std::string hash() const {
    const std::string text = to_json().dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }
};

}  // namespace cssgr
