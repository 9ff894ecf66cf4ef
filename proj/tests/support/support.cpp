#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "sslalm/grad_check.hpp"
#include "sslalm/lora.hpp"
#include "sslalm/ops.hpp"

namespace sslalm::testing {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  return Tensor::from(shape, random_vector(shape_numel(shape), rng, lo, hi));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor r = random_tensor(out.shape(), rng, 0.5, 1.5);
  return ops::sum_all(ops::mul(out, r));
}

namespace {

std::size_t dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

using Fn = std::function<Tensor(std::span<const Tensor>)>;

double check(const Fn& f, std::vector<Tensor> points, std::uint64_t probe) {
  return grad_check_multi([&](std::span<const Tensor> in) { return weighted_sum(f(in), probe); },
                          std::move(points));
}

// Reference block shape D=2, E=4, N=2, L=4 with every parameter and the input
// as check points.
struct BlockGradPoint {
  RandomBlock block;
  std::vector<Tensor> points;
  std::uint64_t probe = 0;
};

BlockGradPoint block_grad_point(std::mt19937_64& rng) {
  BlockConfig cfg;
  cfg.d_model = 2;
  cfg.expand = 2;
  cfg.d_state = 2;
  cfg.d_conv = 4;
  BlockGradPoint p;
  p.block = random_block(cfg, rng(), true);
  // Default dt init keeps the state path near 1e-3 of the output, below
  // what central differences resolve; use step sizes of order one here.
  for (double& v : p.block.store.get("blk.dt_proj.bias").mutable_data()) {
    v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  }
  for (auto& [name, t] : p.block.store.entries()) p.points.push_back(t);
  p.points.push_back(random_tensor({4, 2}, rng));
  p.probe = rng();
  return p;
}

}  // namespace

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;
  auto add = [&](std::string name, std::function<double(std::mt19937_64&)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  add("matmul", [](auto& rng) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    return check([](auto in) { return ops::matmul(in[0], in[1]); },
                 {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}, rng());
  });
  add("linear", [](auto& rng) {
    const std::size_t r = dim(rng), i = dim(rng), o = dim(rng);
    return check([](auto in) { return ops::linear(in[0], in[1], in[2]); },
                 {random_tensor({r, i}, rng), random_tensor({o, i}, rng), random_tensor({o}, rng)},
                 rng());
  });
  add("add", [](auto& rng) {
    const Shape s{dim(rng), dim(rng)};
    return check([](auto in) { return ops::add(in[0], in[1]); },
                 {random_tensor(s, rng), random_tensor(s, rng)}, rng());
  });
  add("add_row_broadcast", [](auto& rng) {
    const std::size_t r = dim(rng), c = dim(rng);
    return check([](auto in) { return ops::add(in[0], in[1]); },
                 {random_tensor({r, c}, rng), random_tensor({c}, rng)}, rng());
  });
  add("sub", [](auto& rng) {
    const Shape s{dim(rng), dim(rng)};
    return check([](auto in) { return ops::sub(in[0], in[1]); },
                 {random_tensor(s, rng), random_tensor(s, rng)}, rng());
  });
  add("mul", [](auto& rng) {
    const Shape s{dim(rng), dim(rng)};
    return check([](auto in) { return ops::mul(in[0], in[1]); },
                 {random_tensor(s, rng), random_tensor(s, rng)}, rng());
  });
  add("mul_row_broadcast", [](auto& rng) {
    const std::size_t r = dim(rng), c = dim(rng);
    return check([](auto in) { return ops::mul(in[0], in[1]); },
                 {random_tensor({r, c}, rng), random_tensor({c}, rng)}, rng());
  });
  add("scale", [](auto& rng) {
    return check([](auto in) { return ops::scale(in[0], -1.7); },
                 {random_tensor({dim(rng), dim(rng)}, rng)}, rng());
  });
  add("silu", [](auto& rng) {
    return check([](auto in) { return ops::silu(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng, -3, 3)}, rng());
  });
  add("softplus", [](auto& rng) {
    return check([](auto in) { return ops::softplus(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng, -3, 3)}, rng());
  });
  add("exp", [](auto& rng) {
    return check([](auto in) { return ops::exp(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng, -2, 2)}, rng());
  });
  add("log", [](auto& rng) {
    return check([](auto in) { return ops::log(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng, 0.2, 3.0)}, rng());
  });
  add("softmax", [](auto& rng) {
    const std::size_t axis = dim(rng, 0, 1);
    return check([axis](auto in) { return ops::softmax(in[0], axis); },
                 {random_tensor({dim(rng), dim(rng)}, rng, -2, 2)}, rng());
  });
  add("rms_norm", [](auto& rng) {
    const std::size_t r = dim(rng), c = dim(rng, 2, 5);
    return check([](auto in) { return ops::rms_norm(in[0], in[1]); },
                 {random_tensor({r, c}, rng), random_tensor({c}, rng)}, rng());
  });
  add("conv2d", [](auto& rng) {
    const std::size_t stride = dim(rng, 1, 2), pad = dim(rng, 0, 1), k = dim(rng, 1, 3);
    const std::size_t H = dim(rng, k, 5), W = dim(rng, k, 5), ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
    return check([stride, pad](auto in) { return ops::conv2d(in[0], in[1], in[2], stride, pad); },
                 {random_tensor({H, W, ci}, rng), random_tensor({co, k, k, ci}, rng),
                  random_tensor({co}, rng)},
                 rng());
  });
  add("depthwise_conv1d", [](auto& rng) {
    const std::size_t K = dim(rng, 1, 4), L = dim(rng), C = dim(rng);
    return check([K](auto in) { return ops::depthwise_conv1d(in[0], in[1], in[2], K - 1); },
                 {random_tensor({L, C}, rng), random_tensor({C, K}, rng), random_tensor({C}, rng)},
                 rng());
  });
  add("embedding_lookup", [](auto& rng) {
    const std::size_t V = dim(rng, 2, 5), D = dim(rng);
    std::vector<int> ids(dim(rng));
    for (int& id : ids) id = static_cast<int>(dim(rng, 0, V - 1));
    return check([ids](auto in) { return ops::embedding_lookup(in[0], ids); },
                 {random_tensor({V, D}, rng)}, rng());
  });
  add("reshape", [](auto& rng) {
    const std::size_t a = dim(rng), b = dim(rng);
    return check([a, b](auto in) { return ops::reshape(in[0], {b, a}); },
                 {random_tensor({a, b}, rng)}, rng());
  });
  add("transpose", [](auto& rng) {
    return check([](auto in) { return ops::transpose(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng)}, rng());
  });
  add("mean", [](auto& rng) {
    const std::size_t axis = dim(rng, 0, 2);
    return check([axis](auto in) { return ops::mean(in[0], axis); },
                 {random_tensor({dim(rng), dim(rng), dim(rng)}, rng)}, rng());
  });
  add("mean_all", [](auto& rng) {
    return check([](auto in) { return ops::mean_all(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng)}, rng());
  });
  add("sum_all", [](auto& rng) {
    return check([](auto in) { return ops::sum_all(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng)}, rng());
  });
  add("slice", [](auto& rng) {
    const std::size_t axis = dim(rng, 0, 1);
    const Shape s{dim(rng, 2, 5), dim(rng, 2, 5)};
    const std::size_t start = dim(rng, 0, s[axis] - 1);
    const std::size_t end = dim(rng, start + 1, s[axis]);
    return check([=](auto in) { return ops::slice(in[0], axis, start, end); },
                 {random_tensor(s, rng)}, rng());
  });
  add("concat", [](auto& rng) {
    const std::size_t axis = dim(rng, 0, 1);
    Shape a{dim(rng), dim(rng)}, b = a;
    b[axis] = dim(rng);
    return check([axis](auto in) { return ops::concat(in, axis); },
                 {random_tensor(a, rng), random_tensor(b, rng)}, rng());
  });
  add("flip_rows", [](auto& rng) {
    return check([](auto in) { return ops::flip_rows(in[0]); },
                 {random_tensor({dim(rng), dim(rng)}, rng)}, rng());
  });
  add("cross_entropy", [](auto& rng) {
    const std::size_t rows = dim(rng), V = dim(rng, 2, 5);
    std::vector<int> targets(rows);
    for (int& t : targets) t = static_cast<int>(dim(rng, 0, V - 1));
    targets[0] = -1;
    if (rows == 1) targets[0] = 0;
    return grad_check_multi(
        [targets](std::span<const Tensor> in) { return ops::cross_entropy(in[0], targets); },
        {random_tensor({rows, V}, rng, -2, 2)});
  });
  add("selective_scan", [](auto& rng) {
    const std::size_t L = dim(rng, 1, 8), D = dim(rng, 1, 3), N = dim(rng, 1, 4);
    return check(
        [](auto in) { return ops::selective_scan(in[0], in[1], in[2], in[3], in[4], in[5]); },
        {random_tensor({L, D}, rng), random_tensor({L, D}, rng, 0.05, 1.0),
         random_tensor({D, N}, rng, -2.0, -0.1), random_tensor({L, N}, rng),
         random_tensor({L, N}, rng), random_tensor({D}, rng)},
        rng());
  });
  add("block_forward", [](auto& rng) {
    BlockGradPoint p = block_grad_point(rng);
    const BlockWeights& w = p.block.weights;
    return check([&w](auto in) { return block_forward(w, in.back()); }, p.points, p.probe);
  });
  return cases;
}

double block_stencil_error(std::mt19937_64& rng) {
  BlockGradPoint p = block_grad_point(rng);
  const BlockWeights& w = p.block.weights;
  Tensor& x = p.points.back();
  auto f = [&] { return weighted_sum(block_forward(w, x), p.probe).item(); };
  for (Tensor& t : p.points) {
    t.set_requires_grad(true);
    t.drop_grad();
  }
  {
    Graph graph;
    Graph::Scope scope(graph);
    backward(graph, weighted_sum(block_forward(w, x), p.probe));
  }
  const double h = 3e-4;
  double worst = 0.0;
  for (Tensor& t : p.points) {
    auto data = t.mutable_data();
    const std::vector<double> analytic(t.grad_view().begin(), t.grad_view().end());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double v[4];
      const double offsets[4] = {2 * h, h, -h, -2 * h};
      for (int k = 0; k < 4; ++k) {
        data[i] = saved + offsets[k];
        v[k] = f();
      }
      data[i] = saved;
      const double numeric = (-v[0] + 8 * v[1] - 8 * v[2] + v[3]) / (12 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

void randomize(ParamStore& store, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, t] : store.entries()) {
    if (name.ends_with("A_log") || name.ends_with("dt_proj.bias")) continue;
    // Norm gains stay near 1; a gain near 0 starves every upstream gradient.
    const double offset = name.ends_with("norm.weight") ? 1.0 : 0.0;
    for (double& v : t.mutable_data()) v = offset + dist(rng);
  }
}

RandomBlock random_block(const BlockConfig& cfg, std::uint64_t seed, bool with_lora) {
  RandomBlock b;
  auto specs = block_param_specs("blk", cfg);
  lora::LoraConfig lcfg;
  lcfg.rank = 2;
  if (with_lora) {
    const auto plan = lora::attach_plan(block_linear_layers("blk", cfg), "in_proj");
    for (auto& s : lora::lora_param_specs(plan, lcfg)) specs.push_back(std::move(s));
  }
  b.store = ParamStore::create(specs, seed);
  randomize(b.store, seed + 1, 0.5);
  b.weights = BlockWeights::bind(b.store, "blk", cfg, lcfg);
  return b;
}

RandomLm random_lm(const LmConfig& cfg, std::uint64_t seed, bool random_lora) {
  RandomLm out;
  lora::LoraConfig lcfg;
  lcfg.rank = 2;
  auto specs = lm_param_specs(cfg);
  for (auto& s : lora::lora_param_specs(lora::attach_plan(lm_linear_layers(cfg), "in_proj"), lcfg)) {
    specs.push_back(std::move(s));
  }
  out.store = ParamStore::create(specs, seed);
  if (random_lora) randomize(out.store, seed + 7, 0.3);
  out.lm = LanguageModel(out.store, cfg, lcfg);
  return out;
}

LalmConfig tiny_lalm_config() {
  LalmConfig cfg = preset("toy");
  cfg.encoder.dims = {4, 8, 16, 32};
  cfg.encoder.d_state = 4;
  cfg.encoder.bridge_out_dim = 16;
  cfg.lm.d_model = 16;
  cfg.lm.n_layers = 1;
  cfg.lm.d_state = 4;
  cfg.lora.rank = 2;
  cfg.lora.alpha = 4.0;
  return cfg;
}

}  // namespace sslalm::testing
