#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "sslalm/kernels.hpp"
#include "support.hpp"

using namespace sslalm;
using sslalm::testing::max_abs_diff;
using sslalm::testing::random_vector;

namespace {

struct ScanCase {
  std::vector<double> u, delta, A, B, C, skip, h0;
  std::size_t L, D, N;

  kernels::ScanArgs args() const {
    return {u, delta, A, B, C, skip, h0, L, D, N};
  }
};

ScanCase random_scan(std::mt19937_64& rng, std::size_t L, std::size_t D, std::size_t N,
                     bool with_h0) {
  ScanCase c;
  c.L = L;
  c.D = D;
  c.N = N;
  c.u = random_vector(L * D, rng);
  c.delta = random_vector(L * D, rng, 0.01, 1.0);
  c.A = random_vector(D * N, rng, -3.0, -0.05);
  c.B = random_vector(L * N, rng);
  c.C = random_vector(L * N, rng);
  c.skip = random_vector(D, rng);
  if (with_h0) c.h0 = random_vector(D * N, rng);
  return c;
}

struct ScanBuffers {
  std::vector<double> y, h, states;
  explicit ScanBuffers(const ScanCase& c)
      : y(c.L * c.D), h(c.D * c.N), states(c.L * c.D * c.N) {}
  kernels::ScanOut out() { return {y, h, states}; }
};

class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : saved_(kernels::max_threads()) { kernels::configure_threads(n); }
  ~ThreadGuard() { kernels::configure_threads(saved_); }

 private:
  int saved_;
};

}  // namespace

TEST_CASE("parallel gemm variants are bit-identical to serial") {
  std::mt19937_64 rng(1);
  ThreadGuard threads(4);
  for (int trial = 0; trial < 20; ++trial) {
    const kernels::GemmDims d{1 + rng() % 17, 1 + rng() % 13, 1 + rng() % 19};
    const auto a = random_vector(d.m * d.k, rng);
    const auto b = random_vector(d.k * d.n, rng);
    const auto init = random_vector(d.m * d.n, rng);
    for (bool accumulate : {false, true}) {
      std::vector<double> s = init, p = init;
      kernels::serial::gemm_nn(a, b, s, d, accumulate);
      kernels::parallel::gemm_nn(a, b, p, d, accumulate);
      CHECK(s == p);
      // b read as n×k for nt, a read as k×m for tn
      s = init;
      p = init;
      kernels::serial::gemm_nt(a, b, s, d, accumulate);
      kernels::parallel::gemm_nt(a, b, p, d, accumulate);
      CHECK(s == p);
      s = init;
      p = init;
      kernels::serial::gemm_tn(a, b, s, d, accumulate);
      kernels::parallel::gemm_tn(a, b, p, d, accumulate);
      CHECK(s == p);
    }
  }
}

TEST_CASE("gemm_nn matches a textbook triple loop") {
  std::mt19937_64 rng(2);
  const kernels::GemmDims d{5, 3, 7};
  const auto a = random_vector(d.m * d.k, rng);
  const auto b = random_vector(d.k * d.n, rng);
  std::vector<double> c(d.m * d.n);
  kernels::serial::gemm_nn(a, b, c, d);
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a[i * d.k + p] * b[p * d.n + j];
      CHECK(c[i * d.n + j] == Catch::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("parallel scan forward and backward are bit-identical to serial") {
  std::mt19937_64 rng(3);
  ThreadGuard threads(3);
  for (int trial = 0; trial < 10; ++trial) {
    const ScanCase c = random_scan(rng, 1 + rng() % 40, 1 + rng() % 9, 1 + rng() % 5, trial % 2);
    ScanBuffers s(c), p(c);
    kernels::serial::selective_scan(c.args(), s.out());
    kernels::parallel::selective_scan(c.args(), p.out());
    CHECK(s.y == p.y);
    CHECK(s.h == p.h);
    CHECK(s.states == p.states);

    const auto dy = random_vector(c.L * c.D, rng);
    auto grads = [&](auto backward) {
      std::vector<std::vector<double>> g{std::vector<double>(c.L * c.D), std::vector<double>(c.L * c.D),
                                         std::vector<double>(c.D * c.N), std::vector<double>(c.L * c.N),
                                         std::vector<double>(c.L * c.N), std::vector<double>(c.D)};
      backward(c.args(), s.states, dy, kernels::ScanGrads{g[0], g[1], g[2], g[3], g[4], g[5]});
      return g;
    };
    CHECK(grads(kernels::serial::selective_scan_backward) ==
          grads(kernels::parallel::selective_scan_backward));
  }
}

TEST_CASE("chunked scan matches the sequential reference for chunk sizes 1, 4 and 16") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const ScanCase c = random_scan(rng, 1 + rng() % 128, 1 + rng() % 6, 1 + rng() % 8, trial % 2);
    ScanBuffers ref(c);
    kernels::serial::selective_scan(c.args(), ref.out());
    for (std::size_t chunk : {1u, 4u, 16u}) {
      ScanBuffers got(c);
      kernels::parallel::selective_scan_chunked(c.args(), {got.y, got.h, {}}, chunk);
      INFO("L=" << c.L << " chunk=" << chunk);
      CHECK(max_abs_diff(ref.y, got.y) < 1e-9);
      CHECK(max_abs_diff(ref.h, got.h) < 1e-9);
    }
  }
}

TEST_CASE("scan results do not depend on the thread count") {
  std::mt19937_64 rng(5);
  const ScanCase c = random_scan(rng, 64, 7, 4, true);
  std::vector<std::vector<double>> runs;
  std::vector<std::vector<double>> chunked;
  for (int t : {1, 2, 4, 7}) {
    ThreadGuard threads(t);
    ScanBuffers b(c);
    kernels::parallel::selective_scan(c.args(), b.out());
    runs.push_back(b.y);
    ScanBuffers k(c);
    kernels::parallel::selective_scan_chunked(c.args(), {k.y, k.h, {}}, 8);
    chunked.push_back(k.y);
  }
  for (std::size_t i = 1; i < runs.size(); ++i) {
    CHECK(runs[i] == runs[0]);
    CHECK(chunked[i] == chunked[0]);
  }
}
