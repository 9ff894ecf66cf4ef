#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslalm/encoder.hpp"
#include "sslalm/language_model.hpp"
#include "sslalm/lora.hpp"
#include "sslalm/params.hpp"

namespace sslalm {

// Everything needed to build (or just count) an audio-conditioned LM:
// encoder + bridge + language model + LoRA adapters.
struct LalmConfig {
  EncoderConfig encoder;
  LmConfig lm;
  lora::LoraConfig lora;
  std::size_t input_T = 1024;
  std::size_t input_F = 128;
  // Loss also covers the question span when set.
  bool include_question_loss = false;

  void validate() const;
};

// Named presets: "toy", "sslalm-small", "sslalm-medium", "hybrid-small",
// "hybrid-medium". Throws ConfigError for unknown names.
LalmConfig preset(const std::string& name);
std::vector<std::string> preset_names();

std::vector<lora::LayerShape> lora_plan(const LalmConfig& cfg);
std::vector<ParamSpec> model_param_specs(const LalmConfig& cfg);

// Parameter group a name belongs to: "encoder", "bridge", "lora" or "lm".
std::string param_group(const std::string& name);

class LalmModel {
 public:
  LalmModel(const LalmConfig& cfg, std::uint64_t seed);
  // Takes ownership of an already populated store (checkpoint load).
  LalmModel(const LalmConfig& cfg, ParamStore store);

  LalmModel(const LalmModel&) = delete;
  LalmModel& operator=(const LalmModel&) = delete;

  const LalmConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const AudioEncoder& encoder() const { return encoder_; }
  const Bridge& bridge() const { return bridge_; }
  const LanguageModel& lm() const { return lm_; }

  // Spectrogram -> K×d_model soft tokens.
  Tensor audio_tokens(const Spectrogram& s) const;
  // Logits over [audio tokens ; text].
  Tensor forward(const Spectrogram& s, std::span<const int> text_ids) const;

 private:
  void bind();

  LalmConfig cfg_;
  ParamStore params_;
  AudioEncoder encoder_;
  Bridge bridge_;
  LanguageModel lm_;
};

}  // namespace sslalm
