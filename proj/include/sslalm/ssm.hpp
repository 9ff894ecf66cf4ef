#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

// Linear state-space sequence maps: continuous parameters, zero-order-hold
// discretization, the recurrent and convolutional views of the same LTI
// system, and the input-dependent (selective) scan.
namespace sslalm::ssm {

// Continuous system h'(t) = A h(t) + B x(t), y(t) = C h(t), step size delta.
struct SsmParams {
  Eigen::MatrixXd A;     // N×N
  Eigen::VectorXd B;     // N
  Eigen::RowVectorXd C;  // N
  double delta = 1.0;

  std::size_t state_dim() const { return static_cast<std::size_t>(A.rows()); }
};

struct DiscreteSsm {
  Eigen::MatrixXd A_bar;
  Eigen::VectorXd B_bar;
  Eigen::RowVectorXd C;
};

// Below this norm of delta·A the exact B̄ is replaced by its limit delta·B.
inline constexpr double kZohLimitNorm = 1e-8;

// Ā = exp(ΔA), B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB.
// Diagonal A is handled elementwise (zero entries take the limit branch).
// Throws ContractError for delta <= 0, an unstable or non-square A, and
// NumericError when a non-diagonal ΔA is singular but not small.
DiscreteSsm discretize_zoh(const SsmParams& params);

struct ScanResult {
  std::vector<double> y;
  Eigen::VectorXd h_last;
};

// h_t = Ā h_{t−1} + B̄ x_t, y_t = C h_t. An empty h0 means zeros.
ScanResult recurrent_scan(const DiscreteSsm& d, std::span<const double> x,
                          const Eigen::VectorXd& h0 = {});

// kernel[k] = C Ā^k B̄ for k < length, by propagating Ā^k B̄ one step at a time.
std::vector<double> conv_kernel(const DiscreteSsm& d, std::size_t length);

// Causal convolution y_t = Σ_{k≤t} kernel[k]·x[t−k]; missing taps are zero.
std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> x);

// Per-timestep parameters shared by all channels of one selective scan.
struct SelectiveParams {
  std::vector<double> delta;  // L, positive
  std::vector<double> B;      // L×N
  std::vector<double> C;      // L×N
  std::vector<double> A;      // N, negative diagonal
  std::size_t L = 0, N = 0;
};

// x and the result are L×D row-major; skip has D entries (empty = zeros).
// Sequential reference.
std::vector<double> selective_scan(const SelectiveParams& p, std::span<const double> x,
                                   std::size_t D, std::span<const double> skip = {});
// Time-chunked parallel variant; agrees with the reference to rounding.
std::vector<double> selective_scan_chunked(const SelectiveParams& p, std::span<const double> x,
                                           std::size_t D, std::size_t chunk,
                                           std::span<const double> skip = {});

}  // namespace sslalm::ssm
