#include "sslalm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sslalm::kernels {

namespace {

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 15;

// Row kernels shared by the serial and parallel drivers so that both run the
// same floating-point sequence per output row.
inline void nn_row(const double* a_row, const double* b, double* c_row, std::size_t n,
                   std::size_t k, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

inline void nt_row(const double* a_row, const double* b, double* c_row, std::size_t n,
                   std::size_t k, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* b_row = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
    c_row[j] = accumulate ? c_row[j] + acc : acc;
  }
}

inline void tn_row(const double* a, const double* b, double* c_row, std::size_t i,
                   std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  // a is k×m, b is k×n; row i of Aᵀ·B.
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

// One channel of the forward scan. `states` may be null.
inline void scan_channel(const ScanArgs& s, std::size_t d, double* y, double* h_last,
                         double* states) {
  const std::size_t L = s.L, D = s.D, N = s.N;
  std::vector<double> h(N, 0.0);
  if (!s.h0.empty()) std::copy_n(s.h0.data() + d * N, N, h.data());
  const double* A = s.A.data() + d * N;
  for (std::size_t t = 0; t < L; ++t) {
    const double dt = s.delta[t * D + d];
    const double x = s.u[t * D + d];
    const double* B = s.B.data() + t * N;
    const double* C = s.C.data() + t * N;
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      h[n] = std::exp(dt * A[n]) * h[n] + dt * B[n] * x;
      acc += C[n] * h[n];
    }
    y[t * D + d] = acc + s.skip[d] * x;
    if (states) std::copy_n(h.data(), N, states + (t * D + d) * N);
  }
  if (h_last) std::copy_n(h.data(), N, h_last + d * N);
}

// One channel of the backward scan. dB_out/dC_out receive this channel's
// L×N contributions (added into existing values).
inline void scan_channel_backward(const ScanArgs& s, std::size_t d, const double* states,
                                  const double* dy, const ScanGrads& g, double* dB_out,
                                  double* dC_out) {
  const std::size_t L = s.L, D = s.D, N = s.N;
  std::vector<double> dh(N, 0.0);
  const double* A = s.A.data() + d * N;
  double* dA = g.dA.data() + d * N;
  for (std::size_t t = L; t-- > 0;) {
    const std::size_t td = t * D + d;
    const double dt = s.delta[td];
    const double x = s.u[td];
    const double gy = dy[td];
    const double* B = s.B.data() + t * N;
    const double* C = s.C.data() + t * N;
    const double* h = states + td * N;
    const double* h_prev = nullptr;
    if (t > 0) {
      h_prev = states + ((t - 1) * D + d) * N;
    } else if (!s.h0.empty()) {
      h_prev = s.h0.data() + d * N;
    }
    g.dskip[d] += gy * x;
    double du = gy * s.skip[d];
    double ddt = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      dC_out[t * N + n] += gy * h[n];
      dh[n] += gy * C[n];
      const double a = std::exp(dt * A[n]);
      const double hp = h_prev ? h_prev[n] : 0.0;
      const double da = dh[n] * hp;
      ddt += da * a * A[n] + dh[n] * B[n] * x;
      dA[n] += da * a * dt;
      dB_out[t * N + n] += dh[n] * dt * x;
      du += dh[n] * dt * B[n];
      dh[n] *= a;
    }
    g.du[td] += du;
    g.ddelta[td] += ddt;
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  for (std::size_t i = 0; i < dims.m; ++i) {
    nn_row(a.data() + i * dims.k, b.data(), c.data() + i * dims.n, dims.n, dims.k, accumulate);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  for (std::size_t i = 0; i < dims.m; ++i) {
    nt_row(a.data() + i * dims.k, b.data(), c.data() + i * dims.n, dims.n, dims.k, accumulate);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  for (std::size_t i = 0; i < dims.m; ++i) {
    tn_row(a.data(), b.data(), c.data() + i * dims.n, i, dims.m, dims.n, dims.k, accumulate);
  }
}

void selective_scan(const ScanArgs& args, const ScanOut& out) {
  for (std::size_t d = 0; d < args.D; ++d) {
    scan_channel(args, d, out.y.data(), out.h_last.empty() ? nullptr : out.h_last.data(),
                 out.states.empty() ? nullptr : out.states.data());
  }
}

void selective_scan_backward(const ScanArgs& args, std::span<const double> states,
                             std::span<const double> dy, const ScanGrads& grads) {
  for (std::size_t d = 0; d < args.D; ++d) {
    scan_channel_backward(args, d, states.data(), dy.data(), grads, grads.dB.data(),
                          grads.dC.data());
  }
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  const auto m = static_cast<std::ptrdiff_t>(dims.m);
#pragma omp parallel for schedule(static) if (dims.m * dims.n * dims.k > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    nn_row(a.data() + i * dims.k, b.data(), c.data() + i * dims.n, dims.n, dims.k, accumulate);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  const auto m = static_cast<std::ptrdiff_t>(dims.m);
#pragma omp parallel for schedule(static) if (dims.m * dims.n * dims.k > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    nt_row(a.data() + i * dims.k, b.data(), c.data() + i * dims.n, dims.n, dims.k, accumulate);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate) {
  const auto m = static_cast<std::ptrdiff_t>(dims.m);
#pragma omp parallel for schedule(static) if (dims.m * dims.n * dims.k > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    tn_row(a.data(), b.data(), c.data() + i * dims.n, i, dims.m, dims.n, dims.k, accumulate);
  }
}

void selective_scan(const ScanArgs& args, const ScanOut& out) {
  const auto D = static_cast<std::ptrdiff_t>(args.D);
  double* h_last = out.h_last.empty() ? nullptr : out.h_last.data();
  double* states = out.states.empty() ? nullptr : out.states.data();
#pragma omp parallel for schedule(static) if (args.L * args.D * args.N > kParallelThreshold)
  for (std::ptrdiff_t d = 0; d < D; ++d) {
    scan_channel(args, d, out.y.data(), h_last, states);
  }
}

void selective_scan_backward(const ScanArgs& args, std::span<const double> states,
                             std::span<const double> dy, const ScanGrads& grads) {
  const std::size_t LN = args.L * args.N;
  std::vector<double> part_dB(args.D * LN, 0.0);
  std::vector<double> part_dC(args.D * LN, 0.0);
  const auto D = static_cast<std::ptrdiff_t>(args.D);
#pragma omp parallel for schedule(static) if (args.L * args.D * args.N > kParallelThreshold)
  for (std::ptrdiff_t d = 0; d < D; ++d) {
    scan_channel_backward(args, d, states.data(), dy.data(), grads, part_dB.data() + d * LN,
                          part_dC.data() + d * LN);
  }
  // Channel-ordered reduction reproduces the serial accumulation sequence.
  for (std::size_t d = 0; d < args.D; ++d) {
    for (std::size_t i = 0; i < LN; ++i) {
      grads.dB[i] += part_dB[d * LN + i];
      grads.dC[i] += part_dC[d * LN + i];
    }
  }
}

void selective_scan_chunked(const ScanArgs& s, const ScanOut& out, std::size_t chunk) {
  const std::size_t L = s.L, D = s.D, N = s.N;
  chunk = std::max<std::size_t>(1, std::min(chunk, L));
  const std::size_t n_chunks = (L + chunk - 1) / chunk;
  // Per (chunk, channel): state reached from zero and the product of decays.
  std::vector<double> local_end(n_chunks * D * N, 0.0);
  std::vector<double> decay_end(n_chunks * D * N, 1.0);
  std::vector<double> carry_in(n_chunks * D * N, 0.0);

  const auto work = static_cast<std::ptrdiff_t>(n_chunks * D);
#pragma omp parallel for schedule(static) if (L * D * N > kParallelThreshold)
  for (std::ptrdiff_t w = 0; w < work; ++w) {
    const std::size_t c = static_cast<std::size_t>(w) / D;
    const std::size_t d = static_cast<std::size_t>(w) % D;
    double* h = local_end.data() + w * N;
    double* P = decay_end.data() + w * N;
    const double* A = s.A.data() + d * N;
    for (std::size_t t = c * chunk; t < std::min(L, (c + 1) * chunk); ++t) {
      const double dt = s.delta[t * D + d];
      const double x = s.u[t * D + d];
      const double* B = s.B.data() + t * N;
      const double* C = s.C.data() + t * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = std::exp(dt * A[n]);
        h[n] = a * h[n] + dt * B[n] * x;
        P[n] *= a;
        acc += C[n] * h[n];
      }
      out.y[t * D + d] = acc + s.skip[d] * x;
    }
  }

  const auto Dp = static_cast<std::ptrdiff_t>(D);
#pragma omp parallel for schedule(static) if (L * D * N > kParallelThreshold)
  for (std::ptrdiff_t d = 0; d < Dp; ++d) {
    std::vector<double> carry(N, 0.0);
    if (!s.h0.empty()) std::copy_n(s.h0.data() + d * N, N, carry.data());
    for (std::size_t c = 0; c < n_chunks; ++c) {
      const std::size_t base = (c * D + d) * N;
      std::copy_n(carry.data(), N, carry_in.data() + base);
      for (std::size_t n = 0; n < N; ++n) {
        carry[n] = decay_end[base + n] * carry[n] + local_end[base + n];
      }
    }
    if (!out.h_last.empty()) std::copy_n(carry.data(), N, out.h_last.data() + d * N);
  }

#pragma omp parallel for schedule(static) if (L * D * N > kParallelThreshold)
  for (std::ptrdiff_t w = 0; w < work; ++w) {
    const std::size_t c = static_cast<std::size_t>(w) / D;
    const std::size_t d = static_cast<std::size_t>(w) % D;
    const double* carry = carry_in.data() + w * N;
    bool zero_carry = true;
    for (std::size_t n = 0; n < N; ++n) zero_carry = zero_carry && carry[n] == 0.0;
    if (zero_carry) continue;
    const double* A = s.A.data() + d * N;
    std::vector<double> P(N, 1.0);
    for (std::size_t t = c * chunk; t < std::min(L, (c + 1) * chunk); ++t) {
      const double dt = s.delta[t * D + d];
      const double* C = s.C.data() + t * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        P[n] *= std::exp(dt * A[n]);
        acc += C[n] * P[n] * carry[n];
      }
      out.y[t * D + d] += acc;
    }
  }
}

}  // namespace parallel

void configure_threads(int threads) {
#ifdef _OPENMP
  if (threads <= 0) {
    if (const char* env = std::getenv("SSLALM_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace sslalm::kernels
