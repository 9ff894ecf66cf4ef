#include "sslalm/encoder.hpp"

#include <cmath>

#include "sslalm/errors.hpp"
#include "sslalm/ops.hpp"

namespace sslalm {

namespace {

std::string group_prefix(std::size_t g, std::size_t i) {
  return "encoder.groups." + std::to_string(g) + ".blocks." + std::to_string(i);
}

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

}  // namespace

void EncoderConfig::validate() const {
  if (stem_patch == 0) throw ConfigError("encoder: stem_patch must be positive");
  if (downsample != 2) throw ConfigError("encoder: only a downsample factor of 2 is supported");
  for (std::size_t g = 0; g < 4; ++g) {
    if (dims[g] == 0) throw ConfigError("encoder: group dims must be positive");
    if (depths[g] == 0) throw ConfigError("encoder: group depths must be at least 1");
    if (g > 0 && dims[g] != 2 * dims[g - 1]) {
      throw ConfigError("encoder: dims must double at each transition, got " +
                        std::to_string(dims[g - 1]) + " -> " + std::to_string(dims[g]));
    }
  }
  if (bridge_out_dim == 0) throw ConfigError("encoder: bridge_out_dim must be positive");
}

BlockConfig EncoderConfig::block(std::size_t group) const {
  BlockConfig b;
  b.d_model = dims[group];
  b.expand = expand;
  b.d_state = d_state;
  b.d_conv = d_conv;
  return b;
}

std::vector<ParamSpec> encoder_param_specs(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t p = cfg.stem_patch;
  std::vector<ParamSpec> specs{
      {"encoder.stem.weight", {cfg.dims[0], p, p, 1}, Init::kUniform, inv_sqrt(p * p)},
      {"encoder.stem.bias", {cfg.dims[0]}, Init::kZeros, 0.0},
  };
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t i = 0; i < cfg.depths[g]; ++i) {
      auto block = block_param_specs(group_prefix(g, i), cfg.block(g));
      specs.insert(specs.end(), block.begin(), block.end());
    }
    if (g < 3) {
      const std::size_t D = cfg.dims[g];
      specs.push_back({"encoder.downsample." + std::to_string(g) + ".weight",
                       {2 * D, 2, 2, D},
                       Init::kUniform,
                       inv_sqrt(4 * D)});
    }
  }
  specs.push_back({"encoder.norm.weight", {cfg.dims[3]}, Init::kOnes, 0.0});
  return specs;
}

std::vector<ParamSpec> bridge_param_specs(const EncoderConfig& cfg) {
  const std::size_t D = cfg.dims[3];
  return {
      {"bridge.conv.weight", {D, 3, 3, D}, Init::kUniform, inv_sqrt(9 * D)},
      {"bridge.conv.bias", {D}, Init::kZeros, 0.0},
      {"bridge.proj.weight", {cfg.bridge_out_dim, D}, Init::kUniform, inv_sqrt(D)},
      {"bridge.proj.bias", {cfg.bridge_out_dim}, Init::kZeros, 0.0},
  };
}

AudioEncoder::AudioEncoder(const ParamStore& store, const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_w_ = store.get("encoder.stem.weight");
  stem_b_ = store.get("encoder.stem.bias");
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t i = 0; i < cfg_.depths[g]; ++i) {
      groups_[g].push_back(BlockWeights::bind(store, group_prefix(g, i), cfg_.block(g)));
    }
    if (g < 3) down_w_[g] = store.get("encoder.downsample." + std::to_string(g) + ".weight");
  }
  norm_ = store.get("encoder.norm.weight");
}

Tensor AudioEncoder::patch_embed(const Spectrogram& s) const {
  const std::size_t p = cfg_.stem_patch;
  if (s.T == 0 || s.F == 0 || s.T % p != 0 || s.F % p != 0) {
    throw ConfigError("patch_embed: spectrogram " + std::to_string(s.T) + "x" +
                      std::to_string(s.F) + " not divisible by stem patch " + std::to_string(p));
  }
  if (s.frames.size() != s.T * s.F) {
    throw DataError("patch_embed: spectrogram holds " + std::to_string(s.frames.size()) +
                    " values, expected " + std::to_string(s.T * s.F));
  }
  const Tensor image = Tensor::from({s.T, s.F, 1}, s.frames);
  return ops::conv2d(image, stem_w_, stem_b_, p, 0);
}

Tensor bidirectional_group(std::span<const BlockWeights> blocks, const Tensor& grid) {
  const std::size_t H = grid.dim(0), W = grid.dim(1), D = grid.dim(2);
  Tensor seq = ops::reshape(grid, {H * W, D});
  for (const BlockWeights& b : blocks) {
    const Tensor fwd = block_forward(b, seq);
    const Tensor bwd = ops::flip_rows(block_forward(b, ops::flip_rows(seq)));
    seq = ops::scale(ops::add(fwd, bwd), 0.5);
  }
  return ops::reshape(seq, {H, W, D});
}

Tensor AudioEncoder::group_forward(const Tensor& grid, std::size_t group) const {
  return bidirectional_group(groups_.at(group), grid);
}

Tensor AudioEncoder::downsample(const Tensor& grid, std::size_t stage) const {
  const std::size_t H = grid.dim(0), W = grid.dim(1);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("downsample " + std::to_string(stage + 1) + ": grid " + std::to_string(H) +
                      "x" + std::to_string(W) + " has an odd side");
  }
  return ops::conv2d(grid, down_w_.at(stage), {}, 2, 0);
}

Tensor AudioEncoder::forward(const Spectrogram& s) const {
  Tensor grid = patch_embed(s);
  for (std::size_t g = 0; g < 3; ++g) {
    grid = downsample(group_forward(grid, g), g);
  }
  grid = group_forward(grid, 3);
  return ops::rms_norm(grid, norm_);
}

Tensor mean_pool(const Tensor& feature_map) {
  const std::size_t H = feature_map.dim(0), W = feature_map.dim(1), D = feature_map.dim(2);
  return ops::mean(ops::reshape(feature_map, {H * W, D}), 0);
}

Bridge::Bridge(const ParamStore& store, const EncoderConfig&) {
  conv_w_ = store.get("bridge.conv.weight");
  conv_b_ = store.get("bridge.conv.bias");
  proj_w_ = store.get("bridge.proj.weight");
  proj_b_ = store.get("bridge.proj.bias");
}

Tensor Bridge::forward(const Tensor& feature_map) const {
  const Tensor reduced = ops::conv2d(feature_map, conv_w_, conv_b_, 2, 1);
  const std::size_t H = reduced.dim(0), W = reduced.dim(1), D = reduced.dim(2);
  return ops::linear(ops::reshape(reduced, {H * W, D}), proj_w_, proj_b_);
}

ShapeReport shape_calculator(const EncoderConfig& cfg, std::size_t T, std::size_t F) {
  cfg.validate();
  const std::size_t p = cfg.stem_patch;
  // Three 2x downsamples follow the stem, so the input must divide by 8p.
  const std::size_t total = p * 8;
  if (T == 0 || F == 0 || T % total != 0 || F % total != 0) {
    throw ConfigError("stage stem: input " + std::to_string(T) + "x" + std::to_string(F) +
                      " not divisible by the total downsample factor " + std::to_string(total));
  }
  ShapeReport r;
  std::size_t H = T / p, W = F / p;
  r.stages.push_back({"stem", H, W, cfg.dims[0]});
  r.stages.push_back({"group1", H, W, cfg.dims[0]});
  for (std::size_t g = 1; g < 4; ++g) {
    H /= 2;
    W /= 2;
    r.stages.push_back({"group" + std::to_string(g + 1), H, W, cfg.dims[g]});
  }
  const std::size_t bh = (H + 2 - 3) / 2 + 1, bw = (W + 2 - 3) / 2 + 1;
  r.stages.push_back({"bridge", bh, bw, cfg.dims[3]});
  r.audio_tokens = bh * bw;
  r.token_dim = cfg.bridge_out_dim;
  return r;
}

}  // namespace sslalm
