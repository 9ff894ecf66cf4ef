#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sslalm/mamba_block.hpp"
#include "support.hpp"

using namespace sslalm;
using sslalm::testing::max_abs_diff;
using sslalm::testing::random_block;
using sslalm::testing::RandomBlock;
using sslalm::testing::random_tensor;

namespace {

std::vector<double> stream(const BlockWeights& w, const Tensor& x) {
  const std::size_t L = x.dim(0), D = x.dim(1);
  BlockState state = BlockState::zeros(w.cfg);
  std::vector<double> out;
  for (std::size_t t = 0; t < L; ++t) {
    const auto row = block_step(w, x.data().subspan(t * D, D), state);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

BlockConfig small_config(std::size_t D, std::size_t N) {
  BlockConfig cfg;
  cfg.d_model = D;
  cfg.d_state = N;
  return cfg;
}

}  // namespace

TEST_CASE("a block with all weights zero passes its input through") {
  RandomBlock b = random_block(small_config(4, 4), 1);
  for (auto& [name, t] : b.store.entries()) {
    for (double& v : t.mutable_data()) v = 0.0;
  }
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({5, 4}, rng);
  const Tensor y = block_forward(b.weights, x);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) ==
        std::vector<double>(x.data().begin(), x.data().end()));
}

TEST_CASE("block output at t ignores inputs after t") {
  std::mt19937_64 rng(2);
  const RandomBlock b = random_block(small_config(4, 4), 2, true);
  const Tensor x = random_tensor({8, 4}, rng);
  const Tensor y = block_forward(b.weights, x);
  for (std::size_t t = 0; t + 1 < 8; ++t) {
    Tensor x2 = x.clone();
    for (std::size_t i = (t + 1) * 4; i < 32; ++i) x2.mutable_data()[i] += 3.0;
    const Tensor y2 = block_forward(b.weights, x2);
    CHECK(max_abs_diff(y.data().first((t + 1) * 4), y2.data().first((t + 1) * 4)) == 0.0);
    CHECK(max_abs_diff(y.data(), y2.data()) > 0.0);
  }
}

TEST_CASE("streaming steps reproduce the full forward on the reference configuration") {
  std::mt19937_64 rng(3);
  BlockConfig cfg = small_config(4, 4);
  cfg.expand = 2;
  const RandomBlock b = random_block(cfg, 3, true);
  const Tensor x = random_tensor({6, 4}, rng);
  CHECK(max_abs_diff(stream(b.weights, x), block_forward(b.weights, x).data()) < 1e-9);

  const Tensor one = random_tensor({1, 4}, rng);
  CHECK(max_abs_diff(stream(b.weights, one), block_forward(b.weights, one).data()) == 0.0);

  const Tensor zeros = Tensor::zeros({8, 4});
  CHECK(max_abs_diff(stream(b.weights, zeros), block_forward(b.weights, zeros).data()) < 1e-12);
}

TEST_CASE("streaming equals full forward over 20 random configurations") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    BlockConfig cfg;
    cfg.d_model = 1 + rng() % 6;
    cfg.expand = 1 + rng() % 3;
    cfg.d_state = 1 + rng() % 5;
    cfg.d_conv = 1 + rng() % 4;
    cfg.dt_rank = rng() % 3;
    const RandomBlock b = random_block(cfg, rng(), trial % 2 == 0);
    const Tensor x = random_tensor({1 + rng() % 12, cfg.d_model}, rng, -2.0, 2.0);
    INFO("trial " << trial << " D=" << cfg.d_model << " E=" << cfg.inner() << " N=" << cfg.d_state
                  << " K=" << cfg.d_conv << " L=" << x.dim(0));
    CHECK(max_abs_diff(stream(b.weights, x), block_forward(b.weights, x).data()) < 1e-9);
  }
}

TEST_CASE("block output stays finite for large inputs") {
  std::mt19937_64 rng(5);
  const RandomBlock b = random_block(small_config(4, 8), 5, true);
  for (double bound : {1.0, 10.0, 100.0, 1000.0}) {
    const Tensor x = random_tensor({16, 4}, rng, -bound, bound);
    for (double v : block_forward(b.weights, x).data()) CHECK(std::isfinite(v));
    for (double v : stream(b.weights, x)) CHECK(std::isfinite(v));
  }
  const Tensor extreme = Tensor::full({4, 4}, 1e3);
  for (double v : block_forward(b.weights, extreme).data()) CHECK(std::isfinite(v));
}

TEST_CASE("block parameter specs match the documented shapes") {
  BlockConfig cfg = small_config(32, 16);
  const auto specs = block_param_specs("b", cfg);
  std::size_t total = 0;
  for (const auto& s : specs) total += shape_numel(s.shape);
  const std::size_t D = 32, E = 64, N = 16, R = 2, K = 4;
  const std::size_t expected = D + 2 * E * D + E * K + E + (R + 2 * N) * E + E * R + E + E * N + E +
                               D * E;
  CHECK(total == expected);
  CHECK(count_params(specs) == expected);
}

TEST_CASE("block gradients agree with a five-point stencil over 200 random points") {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) worst = std::max(worst, sslalm::testing::block_stencil_error(rng));
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}
