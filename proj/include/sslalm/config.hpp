#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sslalm/data.hpp"
#include "sslalm/generation.hpp"
#include "sslalm/model.hpp"
#include "sslalm/training.hpp"

namespace sslalm {

struct DataConfig {
  std::size_t num_classes = 8;
  std::size_t train_clips = 512;
  std::size_t eval_clips = 128;
  std::size_t T = 64;
  std::size_t F = 16;
  std::size_t min_classes = 1;
  std::size_t max_classes = 1;
  double noise = 0.1;
  bool balanced = true;
  std::uint64_t seed = 1;
  std::string questions = "mixed";

  // Corpus spec for one split ("train" or "eval"); the eval split draws from
  // a different seed stream.
  data::SynthSpec synth(const std::string& split) const;
};

struct EvalConfig {
  std::string prompt{data::kCaptionPrompt};
  std::string task;  // empty: use each record's own task
  std::size_t max_clips = 0;  // 0: all
};

// Everything a run needs. Text form is a sectioned key=value file:
//
//   [model]
//   preset = toy
//   lora_rank = 8
//
// Sections: model, encoder, train, sampler, data, eval. Unknown sections or
// keys are rejected. `model.preset` is applied before any other key.
struct RunConfig {
  std::string preset = "toy";
  std::uint64_t model_seed = 0;
  LalmConfig model = sslalm::preset("toy");
  train::TrainConfig train;
  gen::SamplerConfig sampler;
  DataConfig data;
  EvalConfig eval;

  static RunConfig parse(std::string_view text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  // `key` is "section.name". Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Applies "section.name=value".
  void apply_override(const std::string& assignment);
  void validate() const;

  // Every key, in a fixed order; parse(to_text()) reproduces this config.
  std::string to_text() const;
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  static std::vector<std::string> keys();
};

}  // namespace sslalm
