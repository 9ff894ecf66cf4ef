#include "sslalm/language_model.hpp"

#include <cmath>

#include "sslalm/errors.hpp"
#include "sslalm/ops.hpp"

namespace sslalm {

namespace {

std::string layer_prefix(std::size_t i) { return "lm.layers." + std::to_string(i); }

std::vector<ParamSpec> llama_specs(const LmConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.ffn_dim;
  std::vector<ParamSpec> specs{{"lm.embed.weight", {cfg.vocab_size, d}, Init::kNormal, 0.02}};
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
      specs.push_back({p + "." + proj + ".weight", {d, d}, Init::kNormal, 0.02});
    }
    specs.push_back({p + ".gate_proj.weight", {f, d}, Init::kNormal, 0.02});
    specs.push_back({p + ".up_proj.weight", {f, d}, Init::kNormal, 0.02});
    specs.push_back({p + ".down_proj.weight", {d, f}, Init::kNormal, 0.02});
    specs.push_back({p + ".input_norm.weight", {d}, Init::kOnes, 0.0});
    specs.push_back({p + ".post_norm.weight", {d}, Init::kOnes, 0.0});
  }
  specs.push_back({"lm.norm_f.weight", {d}, Init::kOnes, 0.0});
  specs.push_back({"lm.head.weight", {cfg.vocab_size, d}, Init::kNormal, 0.02});
  return specs;
}

}  // namespace

BlockConfig LmConfig::block() const {
  BlockConfig b;
  b.d_model = d_model;
  b.expand = expand;
  b.d_state = d_state;
  b.d_conv = d_conv;
  b.dt_rank = dt_rank;
  return b;
}

std::vector<ParamSpec> lm_param_specs(const LmConfig& cfg) {
  if (cfg.vocab_size == 0 || cfg.d_model == 0 || cfg.n_layers == 0) {
    throw ConfigError("lm: vocab_size, d_model and n_layers must be positive");
  }
  if (cfg.arch == LmArch::kLlama) return llama_specs(cfg);
  std::vector<ParamSpec> specs{
      {"lm.embed.weight", {cfg.vocab_size, cfg.d_model}, Init::kNormal, cfg.embed_std}};
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    auto block = block_param_specs(layer_prefix(i), cfg.block());
    specs.insert(specs.end(), block.begin(), block.end());
  }
  specs.push_back({"lm.norm_f.weight", {cfg.d_model}, Init::kOnes, 0.0});
  return specs;
}

std::vector<lora::LayerShape> lm_linear_layers(const LmConfig& cfg) {
  std::vector<lora::LayerShape> layers;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    if (cfg.arch == LmArch::kLlama) {
      const std::size_t d = cfg.d_model, f = cfg.ffn_dim;
      for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
        layers.push_back({p + "." + proj, d, d});
      }
      layers.push_back({p + ".gate_proj", d, f});
      layers.push_back({p + ".up_proj", d, f});
      layers.push_back({p + ".down_proj", f, d});
    } else {
      auto block = block_linear_layers(p, cfg.block());
      layers.insert(layers.end(), block.begin(), block.end());
    }
  }
  return layers;
}

LanguageModel::LanguageModel(const ParamStore& store, const LmConfig& cfg,
                             const lora::LoraConfig& lora_cfg)
    : cfg_(cfg) {
  if (cfg.arch != LmArch::kMamba) {
    throw ConfigError("lm: only the state-space architecture can be instantiated");
  }
  embed_ = store.get("lm.embed.weight");
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    layers_.push_back(BlockWeights::bind(store, layer_prefix(i), cfg.block(), lora_cfg));
  }
  norm_f_ = store.get("lm.norm_f.weight");
}

Tensor LanguageModel::forward(const Tensor& audio_tokens, std::span<const int> text_ids) const {
  const std::size_t K = audio_tokens.defined() ? audio_tokens.dim(0) : 0;
  if (K + text_ids.size() > cfg_.max_seq) {
    throw ContractError("lm_forward: sequence of " + std::to_string(K + text_ids.size()) +
                        " exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  if (K + text_ids.size() == 0) throw ContractError("lm_forward: empty sequence");
  if (K > 0 && (audio_tokens.rank() != 2 || audio_tokens.dim(1) != cfg_.d_model)) {
    throw DimensionError("lm_forward: audio tokens " + shape_str(audio_tokens.shape()) +
                         " do not match d_model " + std::to_string(cfg_.d_model));
  }
  Tensor x;
  if (text_ids.empty()) {
    x = audio_tokens;
  } else {
    const Tensor text = ops::embedding_lookup(embed_, text_ids);
    if (K > 0) {
      const Tensor parts[] = {audio_tokens, text};
      x = ops::concat(parts, 0);
    } else {
      x = text;
    }
  }
  for (const BlockWeights& layer : layers_) x = block_forward(layer, x);
  return ops::linear(ops::rms_norm(x, norm_f_), embed_);
}

LanguageModel::StreamState LanguageModel::initial_state() const {
  StreamState s;
  for (const BlockWeights& layer : layers_) s.layers.push_back(BlockState::zeros(layer.cfg));
  return s;
}

std::vector<double> LanguageModel::step_embedding(std::span<const double> row,
                                                  StreamState& state) const {
  if (state.position >= cfg_.max_seq) {
    throw ContractError("lm_step: position " + std::to_string(state.position) +
                        " reaches max_seq " + std::to_string(cfg_.max_seq));
  }
  std::vector<double> x(row.begin(), row.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) x = block_step(layers_[i], x, state.layers[i]);
  ++state.position;

  const std::size_t D = cfg_.d_model, V = cfg_.vocab_size;
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(D) + 1e-5);
  for (std::size_t j = 0; j < D; ++j) x[j] = x[j] * inv * norm_f_[j];
  std::vector<double> logits(V);
  auto ed = embed_.data();
  for (std::size_t v = 0; v < V; ++v) {
    double acc = 0.0;
    for (std::size_t j = 0; j < D; ++j) acc += x[j] * ed[v * D + j];
    logits[v] = acc;
  }
  return logits;
}

std::vector<double> LanguageModel::step_token(int id, StreamState& state) const {
  if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
    throw DimensionError("lm_step: token id " + std::to_string(id) + " outside vocabulary");
  }
  const std::size_t D = cfg_.d_model;
  return step_embedding(embed_.data().subspan(static_cast<std::size_t>(id) * D, D), state);
}

Tensor next_token_loss(const Tensor& logits, const TokenSequence& seq) {
  if (seq.loss_mask.size() != seq.ids.size()) {
    throw ContractError("next_token_loss: mask length differs from ids length");
  }
  const std::size_t rows = logits.dim(0);
  if (rows != seq.audio_prefix_len + seq.ids.size()) {
    throw DimensionError("next_token_loss: " + std::to_string(rows) + " logit rows for a " +
                         std::to_string(seq.audio_prefix_len + seq.ids.size()) +
                         "-position sequence");
  }
  std::vector<int> targets(rows, -1);
  bool any = false;
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    if (!seq.loss_mask[t]) continue;
    const std::size_t pos = seq.audio_prefix_len + t;
    if (pos == 0) throw ContractError("next_token_loss: position 0 has no preceding context");
    targets[pos - 1] = seq.ids[t];
    any = true;
  }
  if (!any) throw ContractError("next_token_loss: loss mask selects no positions");
  return ops::cross_entropy(logits, targets);
}

}  // namespace sslalm
