#pragma once

#include <span>
#include <string>
#include <vector>

#include "sslalm/lora.hpp"
#include "sslalm/mamba_block.hpp"
#include "sslalm/params.hpp"
#include "sslalm/tensor.hpp"

namespace sslalm {

enum class LmArch {
  kMamba,  // stacked selective blocks; trainable and runnable
  kLlama,  // attention decoder; shapes only, for parameter accounting
};

struct LmConfig {
  LmArch arch = LmArch::kMamba;
  std::size_t vocab_size = 259;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t max_seq = 256;
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t d_conv = 4;
  std::size_t dt_rank = 0;
  std::size_t ffn_dim = 0;  // attention decoders only
  bool audio_prefix = true;
  double embed_std = 1.0;

  BlockConfig block() const;
};

std::vector<ParamSpec> lm_param_specs(const LmConfig& cfg);
// Every dense projection in the model, named "lm.layers.<i>.<proj>".
std::vector<lora::LayerShape> lm_linear_layers(const LmConfig& cfg);

// Text ids plus which positions the loss reads. Position t of `ids` sits at
// sequence index audio_prefix_len + t.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<bool> loss_mask;
  std::size_t audio_prefix_len = 0;
};

// Token embedding, stacked blocks, final norm and an LM head tied to the
// embedding. Audio tokens enter as rows prepended to the embedded text.
class LanguageModel {
 public:
  LanguageModel() = default;
  LanguageModel(const ParamStore& store, const LmConfig& cfg, const lora::LoraConfig& lora_cfg);

  const LmConfig& config() const { return cfg_; }

  // audio_tokens is K×d_model or undefined. Returns (K+T)×vocab logits.
  Tensor forward(const Tensor& audio_tokens, std::span<const int> text_ids) const;

  struct StreamState {
    std::vector<BlockState> layers;
    std::size_t position = 0;
  };
  StreamState initial_state() const;
  // Feeds one input row (an audio token or an embedded id) and returns logits.
  std::vector<double> step_embedding(std::span<const double> row, StreamState& state) const;
  std::vector<double> step_token(int id, StreamState& state) const;

 private:
  LmConfig cfg_;
  Tensor embed_;
  std::vector<BlockWeights> layers_;
  Tensor norm_f_;
};

// Mean cross-entropy where logits row (audio_prefix_len + t − 1) predicts
// ids[t] for every t with loss_mask[t]. Throws ContractError when the mask
// selects nothing.
Tensor next_token_loss(const Tensor& logits, const TokenSequence& seq);

}  // namespace sslalm
