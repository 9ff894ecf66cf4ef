#include "sslalm/mamba_block.hpp"

#include <algorithm>
#include <cmath>

#include "sslalm/errors.hpp"
#include "sslalm/ops.hpp"

namespace sslalm {

std::vector<ParamSpec> block_param_specs(const std::string& prefix, const BlockConfig& cfg) {
  const std::size_t D = cfg.d_model, E = cfg.inner(), N = cfg.d_state, K = cfg.d_conv,
                    R = cfg.rank();
  if (D == 0 || N == 0 || K == 0 || cfg.expand == 0) {
    throw ConfigError("block '" + prefix + "': dimensions must be positive");
  }
  const auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  return {
      {prefix + ".norm.weight", {D}, Init::kOnes, 0.0},
      {prefix + ".in_proj.weight", {2 * E, D}, Init::kUniform, inv_sqrt(D)},
      {prefix + ".conv1d.weight", {E, K}, Init::kUniform, inv_sqrt(K)},
      {prefix + ".conv1d.bias", {E}, Init::kUniform, inv_sqrt(K)},
      {prefix + ".x_proj.weight", {R + 2 * N, E}, Init::kUniform, inv_sqrt(E)},
      {prefix + ".dt_proj.weight", {E, R}, Init::kUniform, inv_sqrt(R)},
      {prefix + ".dt_proj.bias", {E}, Init::kDtBias, 0.0},
      {prefix + ".A_log", {E, N}, Init::kALog, 0.0},
      {prefix + ".D", {E}, Init::kOnes, 0.0},
      {prefix + ".out_proj.weight", {D, E}, Init::kUniform, inv_sqrt(E)},
  };
}

std::vector<lora::LayerShape> block_linear_layers(const std::string& prefix,
                                                  const BlockConfig& cfg) {
  const std::size_t D = cfg.d_model, E = cfg.inner(), N = cfg.d_state, R = cfg.rank();
  return {
      {prefix + ".in_proj", D, 2 * E},
      {prefix + ".x_proj", E, R + 2 * N},
      {prefix + ".dt_proj", R, E},
      {prefix + ".out_proj", E, D},
  };
}

BlockWeights BlockWeights::bind(const ParamStore& store, const std::string& prefix,
                                const BlockConfig& cfg, const lora::LoraConfig& lora_cfg) {
  BlockWeights w;
  w.cfg = cfg;
  w.norm = store.get(prefix + ".norm.weight");
  w.in_proj = store.get(prefix + ".in_proj.weight");
  w.conv_w = store.get(prefix + ".conv1d.weight");
  w.conv_b = store.get(prefix + ".conv1d.bias");
  w.x_proj = store.get(prefix + ".x_proj.weight");
  w.dt_w = store.get(prefix + ".dt_proj.weight");
  w.dt_b = store.get(prefix + ".dt_proj.bias");
  w.A_log = store.get(prefix + ".A_log");
  w.skip = store.get(prefix + ".D");
  w.out_proj = store.get(prefix + ".out_proj.weight");
  w.in_proj_lora = lora::bind_adapter(store, prefix + ".in_proj", lora_cfg);
  return w;
}

Tensor block_forward(const BlockWeights& w, const Tensor& x) {
  const BlockConfig& c = w.cfg;
  const std::size_t E = c.inner(), N = c.d_state, R = c.rank();
  if (x.rank() != 2 || x.dim(1) != c.d_model || x.dim(0) == 0) {
    throw DimensionError("block_forward: input " + shape_str(x.shape()) + " expected L×" +
                         std::to_string(c.d_model) + " with L >= 1");
  }
  const Tensor xn = ops::rms_norm(x, w.norm);
  Tensor xz = ops::linear(xn, w.in_proj);
  if (w.in_proj_lora.A.defined()) xz = lora::lora_forward(xz, w.in_proj_lora, xn);
  const Tensor content = ops::slice(xz, 1, 0, E);
  const Tensor gate = ops::slice(xz, 1, E, 2 * E);

  const Tensor u = ops::silu(ops::depthwise_conv1d(content, w.conv_w, w.conv_b, c.d_conv - 1));
  const Tensor xdbl = ops::linear(u, w.x_proj);
  const Tensor dt_low = ops::slice(xdbl, 1, 0, R);
  const Tensor Bm = ops::slice(xdbl, 1, R, R + N);
  const Tensor Cm = ops::slice(xdbl, 1, R + N, R + 2 * N);
  const Tensor delta = ops::softplus(ops::linear(dt_low, w.dt_w, w.dt_b));
  const Tensor A = ops::scale(ops::exp(w.A_log), -1.0);

  const Tensor y = ops::selective_scan(u, delta, A, Bm, Cm, w.skip);
  const Tensor gated = ops::mul(y, ops::silu(gate));
  return ops::add(x, ops::linear(gated, w.out_proj));
}

BlockState BlockState::zeros(const BlockConfig& cfg) {
  BlockState s;
  s.conv_window.assign((cfg.d_conv - 1) * cfg.inner(), 0.0);
  s.h.assign(cfg.inner() * cfg.d_state, 0.0);
  return s;
}

namespace {

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double silu(double v) { return v * sigmoid(v); }

double softplus(double v) {
  return std::max(v > 30.0 ? v : std::log1p(std::exp(v)), 1e-300);
}

// out[o] = Σ_j W[o,j]·x[j] (+ b[o]) with the same accumulation order as the
// batched kernel.
void matvec(const Tensor& W, std::span<const double> x, std::span<double> out,
            const Tensor& bias = {}) {
  const std::size_t rows = W.dim(0), cols = W.dim(1);
  auto wd = W.data();
  for (std::size_t o = 0; o < rows; ++o) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += x[j] * wd[o * cols + j];
    out[o] = bias.defined() ? acc + bias[o] : acc;
  }
}

}  // namespace

std::vector<double> block_step(const BlockWeights& w, std::span<const double> x_t,
                               BlockState& state) {
  const BlockConfig& c = w.cfg;
  const std::size_t D = c.d_model, E = c.inner(), N = c.d_state, R = c.rank(), K = c.d_conv;
  if (x_t.size() != D) {
    throw DimensionError("block_step: input has " + std::to_string(x_t.size()) +
                         " values, block width is " + std::to_string(D));
  }

  std::vector<double> xn(D);
  double ss = 0.0;
  for (double v : x_t) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(D) + 1e-5);
  for (std::size_t j = 0; j < D; ++j) xn[j] = x_t[j] * inv * w.norm[j];

  std::vector<double> xz(2 * E);
  matvec(w.in_proj, xn, xz);
  if (w.in_proj_lora.A.defined()) lora::lora_forward_inplace(xz, w.in_proj_lora, xn);

  // Causal depthwise conv over [window ; content_t].
  std::vector<double> u(E);
  auto cw = w.conv_w.data();
  for (std::size_t e = 0; e < E; ++e) {
    double acc = w.conv_b[e];
    for (std::size_t k = 0; k + 1 < K; ++k) acc += cw[e * K + k] * state.conv_window[k * E + e];
    acc += cw[e * K + K - 1] * xz[e];
    u[e] = silu(acc);
  }
  if (K > 1) {
    std::copy(state.conv_window.begin() + static_cast<std::ptrdiff_t>(E), state.conv_window.end(),
              state.conv_window.begin());
    std::copy_n(xz.begin(), E, state.conv_window.end() - static_cast<std::ptrdiff_t>(E));
  }

  std::vector<double> xdbl(R + 2 * N);
  matvec(w.x_proj, u, xdbl);
  std::vector<double> delta(E);
  matvec(w.dt_w, std::span<const double>(xdbl.data(), R), delta, w.dt_b);
  for (double& d : delta) d = softplus(d);

  const double* Bm = xdbl.data() + R;
  const double* Cm = xdbl.data() + R + N;
  auto a_log = w.A_log.data();
  std::vector<double> gated(E);
  for (std::size_t e = 0; e < E; ++e) {
    double* h = state.h.data() + e * N;
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double A = -std::exp(a_log[e * N + n]);
      h[n] = std::exp(delta[e] * A) * h[n] + delta[e] * Bm[n] * u[e];
      acc += Cm[n] * h[n];
    }
    const double y = acc + w.skip[e] * u[e];
    gated[e] = y * silu(xz[E + e]);
  }

  std::vector<double> out(D);
  matvec(w.out_proj, gated, out);
  for (std::size_t j = 0; j < D; ++j) out[j] += x_t[j];
  return out;
}

}  // namespace sslalm
