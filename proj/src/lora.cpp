#include "sslalm/lora.hpp"

#include <regex>

#include "sslalm/errors.hpp"
#include "sslalm/ops.hpp"

namespace sslalm::lora {

Tensor lora_forward(const Tensor& base_out, const LoraAdapter& adapter, const Tensor& x) {
  const Tensor low = ops::linear(x, adapter.A);
  const Tensor delta = ops::linear(low, adapter.B);
  return ops::add(base_out, ops::scale(delta, adapter.scale()));
}

void lora_forward_inplace(std::span<double> base_out, const LoraAdapter& adapter,
                          std::span<const double> x) {
  const std::size_t r = adapter.A.dim(0), d_in = adapter.A.dim(1), d_out = adapter.B.dim(0);
  auto a = adapter.A.data();
  auto b = adapter.B.data();
  std::vector<double> low(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d_in; ++j) acc += a[i * d_in + j] * x[j];
    low[i] = acc;
  }
  const double s = adapter.scale();
  for (std::size_t o = 0; o < d_out; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < r; ++i) acc += b[o * r + i] * low[i];
    base_out[o] += acc * s;
  }
}

namespace {

std::vector<double> scaled_product(const LoraAdapter& adapter) {
  const std::size_t r = adapter.A.dim(0), d_in = adapter.A.dim(1), d_out = adapter.B.dim(0);
  auto a = adapter.A.data();
  auto b = adapter.B.data();
  std::vector<double> out(d_out * d_in, 0.0);
  for (std::size_t o = 0; o < d_out; ++o) {
    for (std::size_t j = 0; j < d_in; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < r; ++i) acc += b[o * r + i] * a[i * d_in + j];
      out[o * d_in + j] = adapter.scale() * acc;
    }
  }
  return out;
}

void check_shapes(const Tensor& w, const LoraAdapter& adapter) {
  if (w.rank() != 2 || adapter.A.dim(1) != w.dim(1) || adapter.B.dim(0) != w.dim(0) ||
      adapter.A.dim(0) != adapter.B.dim(1)) {
    throw DimensionError("lora merge: weight " + shape_str(w.shape()) + " vs A " +
                         shape_str(adapter.A.shape()) + ", B " + shape_str(adapter.B.shape()));
  }
}

}  // namespace

Tensor merge(const Tensor& base_weight, const LoraAdapter& adapter) {
  check_shapes(base_weight, adapter);
  const auto delta = scaled_product(adapter);
  std::vector<double> out(base_weight.data().begin(), base_weight.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return Tensor::from(base_weight.shape(), std::move(out));
}

Tensor unmerge(const Tensor& merged_weight, const LoraAdapter& adapter) {
  check_shapes(merged_weight, adapter);
  const auto delta = scaled_product(adapter);
  std::vector<double> out(merged_weight.data().begin(), merged_weight.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= delta[i];
  return Tensor::from(merged_weight.shape(), std::move(out));
}

std::vector<LayerShape> attach_plan(const std::vector<LayerShape>& layers,
                                    const std::string& pattern) {
  std::regex re;
  try {
    re = std::regex(pattern);
  } catch (const std::regex_error& e) {
    throw ConfigError("lora: invalid target pattern '" + pattern + "': " + e.what());
  }
  std::vector<LayerShape> plan;
  for (const auto& layer : layers) {
    if (std::regex_search(layer.name, re)) plan.push_back(layer);
  }
  if (plan.empty()) throw ConfigError("lora: target pattern '" + pattern + "' matches no layer");
  return plan;
}

std::size_t count_lora_params(const std::vector<LayerShape>& plan, std::size_t rank) {
  if (rank == 0) throw ConfigError("lora: rank must be at least 1");
  std::size_t n = 0;
  for (const auto& e : plan) n += rank * (e.d_in + e.d_out);
  return n;
}

std::vector<ParamSpec> lora_param_specs(const std::vector<LayerShape>& plan,
                                        const LoraConfig& cfg) {
  std::vector<ParamSpec> specs;
  for (const auto& e : plan) {
    specs.push_back({e.name + ".lora_A", {cfg.rank, e.d_in}, Init::kNormal, 0.02});
    specs.push_back({e.name + ".lora_B", {e.d_out, cfg.rank}, Init::kZeros, 0.0});
  }
  return specs;
}

LoraAdapter bind_adapter(const ParamStore& store, const std::string& target,
                         const LoraConfig& cfg) {
  LoraAdapter a;
  a.target = target;
  a.alpha = cfg.alpha;
  a.rank = cfg.rank;
  if (store.contains(target + ".lora_A") || store.contains(target + ".lora_B")) {
    a.A = store.get(target + ".lora_A");
    a.B = store.get(target + ".lora_B");
  }
  return a;
}

}  // namespace sslalm::lora
