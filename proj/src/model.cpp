#include "sslalm/model.hpp"

#include "sslalm/errors.hpp"

namespace sslalm {

void LalmConfig::validate() const {
  encoder.validate();
  if (lm.audio_prefix && lm.d_model != encoder.bridge_out_dim) {
    throw ConfigError("model: lm d_model " + std::to_string(lm.d_model) +
                      " must equal bridge_out_dim " + std::to_string(encoder.bridge_out_dim));
  }
  if (lora.rank == 0) throw ConfigError("model: lora rank must be at least 1");
}

namespace {

LmConfig mamba_2p8b() {
  LmConfig lm;
  lm.arch = LmArch::kMamba;
  lm.vocab_size = 50280;
  lm.d_model = 2560;
  lm.n_layers = 64;
  lm.max_seq = 2048;
  lm.embed_std = 0.02;
  return lm;
}

LmConfig llama_7b() {
  LmConfig lm;
  lm.arch = LmArch::kLlama;
  lm.vocab_size = 32000;
  lm.d_model = 4096;
  lm.n_layers = 32;
  lm.ffn_dim = 11008;
  lm.max_seq = 2048;
  return lm;
}

}  // namespace

LalmConfig preset(const std::string& name) {
  LalmConfig cfg;
  if (name == "toy") {
    cfg.encoder.stem_patch = 2;
    cfg.encoder.dims = {8, 16, 32, 64};
    cfg.encoder.depths = {1, 1, 1, 1};
    cfg.encoder.d_state = 8;
    cfg.encoder.bridge_out_dim = 32;
    cfg.lm.d_model = 32;
    cfg.lm.n_layers = 2;
    cfg.lm.d_state = 8;
    cfg.lm.max_seq = 160;
    cfg.input_T = 64;
    cfg.input_F = 16;
    return cfg;
  }
  const bool medium = name.ends_with("-medium");
  if (!medium && !name.ends_with("-small")) throw ConfigError("unknown preset '" + name + "'");
  // Stage-3/4 depths set the trainable totals near 43M (small) and 62M (medium).
  cfg.encoder.depths = medium ? std::array<std::size_t, 4>{2, 2, 32, 4}
                              : std::array<std::size_t, 4>{2, 2, 12, 4};
  if (name.starts_with("sslalm-")) {
    cfg.lm = mamba_2p8b();
    cfg.lora.targets = "in_proj";
  } else if (name.starts_with("hybrid-")) {
    cfg.lm = llama_7b();
    cfg.lora.targets = "q_proj|k_proj";
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  cfg.encoder.bridge_out_dim = cfg.lm.d_model;
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"toy", "sslalm-small", "sslalm-medium", "hybrid-small", "hybrid-medium"};
}

std::vector<lora::LayerShape> lora_plan(const LalmConfig& cfg) {
  return lora::attach_plan(lm_linear_layers(cfg.lm), cfg.lora.targets);
}

std::vector<ParamSpec> model_param_specs(const LalmConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs = encoder_param_specs(cfg.encoder);
  for (auto& s : bridge_param_specs(cfg.encoder)) specs.push_back(std::move(s));
  for (auto& s : lm_param_specs(cfg.lm)) specs.push_back(std::move(s));
  for (auto& s : lora::lora_param_specs(lora_plan(cfg), cfg.lora)) specs.push_back(std::move(s));
  return specs;
}

std::string param_group(const std::string& name) {
  if (name.find(".lora_") != std::string::npos) return "lora";
  if (name.starts_with("encoder.")) return "encoder";
  if (name.starts_with("bridge.")) return "bridge";
  return "lm";
}

LalmModel::LalmModel(const LalmConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), params_(ParamStore::create(model_param_specs(cfg), seed)) {
  bind();
}

LalmModel::LalmModel(const LalmConfig& cfg, ParamStore store)
    : cfg_(cfg), params_(std::move(store)) {
  cfg_.validate();
  bind();
}

void LalmModel::bind() {
  encoder_ = AudioEncoder(params_, cfg_.encoder);
  bridge_ = Bridge(params_, cfg_.encoder);
  lm_ = LanguageModel(params_, cfg_.lm, cfg_.lora);
}

Tensor LalmModel::audio_tokens(const Spectrogram& s) const {
  return bridge_.forward(encoder_.forward(s));
}

Tensor LalmModel::forward(const Spectrogram& s, std::span<const int> text_ids) const {
  return lm_.forward(audio_tokens(s), text_ids);
}

}  // namespace sslalm
