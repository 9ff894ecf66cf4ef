#pragma once

#include <array>
#include <string>
#include <vector>

#include "sslalm/mamba_block.hpp"
#include "sslalm/params.hpp"
#include "sslalm/tensor.hpp"

namespace sslalm {

// Time×frequency input. frames is T×F row-major.
struct Spectrogram {
  std::size_t T = 0;
  std::size_t F = 0;
  std::vector<double> frames;
  double frame_rate = 100.0;
};

// Four-stage hierarchical encoder: a patch stem, then (group, 2× downsample)
// three times, then a last group. Feature width doubles at every downsample.
struct EncoderConfig {
  std::size_t stem_patch = 4;
  std::array<std::size_t, 4> dims{96, 192, 384, 768};
  std::array<std::size_t, 4> depths{2, 2, 6, 2};
  std::size_t downsample = 2;
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t d_conv = 4;
  std::size_t bridge_out_dim = 2560;

  // Checks the doubling and positivity invariants; throws ConfigError.
  void validate() const;
  BlockConfig block(std::size_t group) const;
};

std::vector<ParamSpec> encoder_param_specs(const EncoderConfig& cfg);
std::vector<ParamSpec> bridge_param_specs(const EncoderConfig& cfg);

// Feature maps are H×W×D tensors (raster order, H along time).
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(const ParamStore& store, const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  // Non-overlapping stem_patch² patches projected to dims[0].
  Tensor patch_embed(const Spectrogram& s) const;
  // `depth` = number of blocks in group g applied bidirectionally.
  Tensor group_forward(const Tensor& grid, std::size_t group) const;
  // 2×2 neighborhoods concatenated and projected D -> 2D.
  Tensor downsample(const Tensor& grid, std::size_t stage) const;
  Tensor forward(const Spectrogram& s) const;

 private:
  EncoderConfig cfg_;
  Tensor stem_w_, stem_b_;
  std::array<std::vector<BlockWeights>, 4> groups_;
  std::array<Tensor, 3> down_w_;
  Tensor norm_;
};

// Bidirectional pass of a block stack over an H×W×D grid: the raster sequence
// and its reverse go through the same blocks and the outputs are averaged.
Tensor bidirectional_group(std::span<const BlockWeights> blocks, const Tensor& grid);

// Mean over all H×W positions -> D.
Tensor mean_pool(const Tensor& feature_map);

// conv(kernel 3, stride 2, pad 1, D->D) then linear D -> out_dim, producing
// ceil(H/2)·ceil(W/2) audio tokens in raster order.
class Bridge {
 public:
  Bridge() = default;
  Bridge(const ParamStore& store, const EncoderConfig& cfg);
  Tensor forward(const Tensor& feature_map) const;

 private:
  Tensor conv_w_, conv_b_, proj_w_, proj_b_;
};

struct StageShape {
  std::string stage;
  std::size_t H = 0, W = 0, D = 0;
};

struct ShapeReport {
  std::vector<StageShape> stages;  // stem, groups 1-4 (after downsampling), bridge grid
  std::size_t audio_tokens = 0;
  std::size_t token_dim = 0;
};

// Pure shape arithmetic for input T×F; throws ConfigError naming the stage
// that cannot divide its input.
ShapeReport shape_calculator(const EncoderConfig& cfg, std::size_t T, std::size_t F);

}  // namespace sslalm
