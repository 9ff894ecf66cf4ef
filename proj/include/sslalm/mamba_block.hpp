#pragma once

#include <span>
#include <string>
#include <vector>

#include "sslalm/lora.hpp"
#include "sslalm/params.hpp"
#include "sslalm/tensor.hpp"

namespace sslalm {

// Dimensions of one selective state-space block. Zero dt_rank means ceil(D/16).
struct BlockConfig {
  std::size_t d_model = 0;
  std::size_t expand = 2;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t dt_rank = 0;

  std::size_t inner() const { return expand * d_model; }
  std::size_t rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
};

// Parameter names are "<prefix>.<field>", e.g. "lm.layers.0.in_proj.weight".
std::vector<ParamSpec> block_param_specs(const std::string& prefix, const BlockConfig& cfg);
// The block's dense projections, for LoRA attach planning.
std::vector<lora::LayerShape> block_linear_layers(const std::string& prefix,
                                                  const BlockConfig& cfg);

struct BlockWeights {
  BlockConfig cfg;
  Tensor norm;      // D
  Tensor in_proj;   // 2E×D; rows [0,E) content, [E,2E) gate
  Tensor conv_w;    // E×K depthwise
  Tensor conv_b;    // E
  Tensor x_proj;    // (R+2N)×E; rows [0,R) Δ, then B, then C
  Tensor dt_w;      // E×R
  Tensor dt_b;      // E
  Tensor A_log;     // E×N, A = −exp(A_log)
  Tensor skip;      // E
  Tensor out_proj;  // D×E
  lora::LoraAdapter in_proj_lora;  // tensors undefined when not attached

  static BlockWeights bind(const ParamStore& store, const std::string& prefix,
                           const BlockConfig& cfg, const lora::LoraConfig& lora_cfg = {});
};

// Residual selective block over a sequence x of shape L×D:
//   out = x + out_proj(silu(gate) ⊙ scan(u)),
//   u = silu(causal_conv(content)), [content|gate] = in_proj(rms_norm(x)).
// Causal in the sequence index.
Tensor block_forward(const BlockWeights& w, const Tensor& x);

// Carried state for token-at-a-time inference.
struct BlockState {
  std::vector<double> conv_window;  // (K−1)×E most recent content rows, oldest first
  std::vector<double> h;            // E×N

  static BlockState zeros(const BlockConfig& cfg);
};

// One step of the recurrent view; matches row t of block_forward on the same
// prefix. Returns out_t (length D) and advances `state`.
std::vector<double> block_step(const BlockWeights& w, std::span<const double> x_t,
                               BlockState& state);

}  // namespace sslalm
