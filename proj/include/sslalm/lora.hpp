#pragma once

#include <span>
#include <string>
#include <vector>

#include "sslalm/params.hpp"
#include "sslalm/tensor.hpp"

namespace sslalm::lora {

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  // ECMAScript regex searched in each linear layer name.
  std::string targets = "in_proj";
};

// Low-rank update W + (alpha/rank)·B·A of a frozen d_out×d_in weight.
// A is rank×d_in, B is d_out×rank. B starts at zero, so a fresh adapter is a no-op.
struct LoraAdapter {
  Tensor A;
  Tensor B;
  double alpha = 16.0;
  std::size_t rank = 8;
  std::string target;

  double scale() const { return alpha / static_cast<double>(rank); }
};

// base_out + scale·(x·Aᵀ)·Bᵀ for x of shape L×d_in.
Tensor lora_forward(const Tensor& base_out, const LoraAdapter& adapter, const Tensor& x);
// Single-vector form used by the streaming path; adds into base_out.
void lora_forward_inplace(std::span<double> base_out, const LoraAdapter& adapter,
                          std::span<const double> x);

Tensor merge(const Tensor& base_weight, const LoraAdapter& adapter);
Tensor unmerge(const Tensor& merged_weight, const LoraAdapter& adapter);

// One linear layer of a model, by name.
struct LayerShape {
  std::string name;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

// Layers whose names match `pattern`, in model order. Throws ConfigError when
// nothing matches.
std::vector<LayerShape> attach_plan(const std::vector<LayerShape>& layers,
                                    const std::string& pattern);

std::size_t count_lora_params(const std::vector<LayerShape>& plan, std::size_t rank);

// "<target>.lora_A" (normal init) and "<target>.lora_B" (zeros) per entry.
std::vector<ParamSpec> lora_param_specs(const std::vector<LayerShape>& plan,
                                        const LoraConfig& cfg);

// Looks up "<target>.lora_A/B" in the store. The adapter's tensors stay
// undefined when the store has none.
LoraAdapter bind_adapter(const ParamStore& store, const std::string& target,
                         const LoraConfig& cfg);

}  // namespace sslalm::lora
