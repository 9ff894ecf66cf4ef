#pragma once

// Dense inner loops used by the tensor ops and the state-space scan.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::parallel`. The parallel versions split work across
// independent outputs and keep the per-output accumulation order of the
// serial code, so both produce bit-identical results at any thread count.
// The only exception is selective_scan_chunked, which reassociates the time
// recurrence and agrees with the reference to rounding.

#include <cstddef>
#include <span>

namespace sslalm::kernels {

// Shapes are row-major. "nn": C = A·B, "nt": C = A·Bᵀ, "tn": C = Aᵀ·B.
// Outputs are overwritten unless `accumulate` is set.
struct GemmDims {
  std::size_t m, n, k;
};

// Inputs for one diagonal selective scan over L steps and D channels.
//   u, delta: L×D    A: D×N (negative)    B, C: L×N    skip: D
//   h0: D×N initial state, empty for zeros.
struct ScanArgs {
  std::span<const double> u;
  std::span<const double> delta;
  std::span<const double> A;
  std::span<const double> B;
  std::span<const double> C;
  std::span<const double> skip;
  std::span<const double> h0;
  std::size_t L = 0, D = 0, N = 0;
};

// Output buffers. `states` (L×D×N) is optional and is what backward needs.
struct ScanOut {
  std::span<double> y;
  std::span<double> h_last;
  std::span<double> states;
};

struct ScanGrads {
  std::span<double> du, ddelta, dA, dB, dC, dskip;
};

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);

// The normative sequential scan: for each channel d and step t
//   h = exp(Δ[t,d]·A[d]) ⊙ h + Δ[t,d]·B[t]·u[t,d]
//   y[t,d] = C[t]·h + skip[d]·u[t,d]
void selective_scan(const ScanArgs& args, const ScanOut& out);

// Reverse sweep. `states` must be the forward states; grads accumulate.
void selective_scan_backward(const ScanArgs& args, std::span<const double> states,
                             std::span<const double> dy, const ScanGrads& grads);

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate = false);

// Channels in parallel, time sequential. Bit-identical to serial::selective_scan.
void selective_scan(const ScanArgs& args, const ScanOut& out);

// Bit-identical to the serial backward; the cross-channel sums for dB and dC
// are reduced in channel order after the parallel region.
void selective_scan_backward(const ScanArgs& args, std::span<const double> states,
                             std::span<const double> dy, const ScanGrads& grads);

// Time axis split into chunks of `chunk` steps. Each chunk is scanned from a
// zero state in parallel, carries are then propagated chunk to chunk, and
// outputs are corrected with the carried-in state. `states` is not filled.
void selective_scan_chunked(const ScanArgs& args, const ScanOut& out, std::size_t chunk);

}  // namespace parallel

// Caps OpenMP worker threads. Reads SSLALM_THREADS when `threads` is 0.
void configure_threads(int threads = 0);
int max_threads();

}  // namespace sslalm::kernels
