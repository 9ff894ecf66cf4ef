#include "sslalm/ssm.hpp"

#include <cmath>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "sslalm/errors.hpp"
#include "sslalm/kernels.hpp"

namespace sslalm::ssm {

namespace {

bool is_diagonal(const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i != j && m(i, j) != 0.0) return false;
    }
  }
  return true;
}

void validate(const SsmParams& p) {
  const auto n = p.A.rows();
  if (p.A.cols() != n || p.B.size() != n || p.C.size() != n || n == 0) {
    throw DimensionError("discretize_zoh: A must be N×N with B, C of length N");
  }
  if (!(p.delta > 0.0)) {
    throw ContractError("discretize_zoh: delta must be positive, got " + std::to_string(p.delta));
  }
  const Eigen::VectorXcd eig = p.A.eigenvalues();
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (eig[i].real() > 1e-12) {
      throw ContractError("discretize_zoh: A has an eigenvalue with positive real part " +
                          std::to_string(eig[i].real()));
    }
  }
}

}  // namespace

DiscreteSsm discretize_zoh(const SsmParams& params) {
  validate(params);
  const Eigen::Index n = params.A.rows();
  const Eigen::MatrixXd dA = params.delta * params.A;
  const Eigen::VectorXd dB = params.delta * params.B;

  DiscreteSsm out;
  out.C = params.C;
  if (is_diagonal(params.A)) {
    out.A_bar = Eigen::MatrixXd::Zero(n, n);
    out.B_bar.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = dA(i, i);
      out.A_bar(i, i) = std::exp(z);
      // (e^z − 1)/z → 1 as z → 0
      out.B_bar[i] = std::abs(z) < kZohLimitNorm ? dB[i] : std::expm1(z) / z * dB[i];
    }
    return out;
  }

  out.A_bar = dA.exp();
  if (dA.norm() < kZohLimitNorm) {
    out.B_bar = dB;
    return out;
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(dA);
  if (!lu.isInvertible()) {
    throw NumericError("discretize_zoh: matrix delta*A is singular (rank " +
                       std::to_string(lu.rank()) + " of " + std::to_string(n) + ")");
  }
  out.B_bar = lu.solve((out.A_bar - Eigen::MatrixXd::Identity(n, n)) * dB);
  return out;
}

ScanResult recurrent_scan(const DiscreteSsm& d, std::span<const double> x,
                          const Eigen::VectorXd& h0) {
  const Eigen::Index n = d.A_bar.rows();
  if (x.empty()) throw ContractError("recurrent_scan: input sequence is empty");
  if (h0.size() != 0 && h0.size() != n) {
    throw DimensionError("recurrent_scan: h0 has " + std::to_string(h0.size()) +
                         " entries, state dim is " + std::to_string(n));
  }
  ScanResult r;
  r.h_last = h0.size() == 0 ? Eigen::VectorXd::Zero(n) : h0;
  if (!r.h_last.allFinite()) throw ContractError("recurrent_scan: h0 is not finite");
  r.y.reserve(x.size());
  for (double xt : x) {
    r.h_last = d.A_bar * r.h_last + d.B_bar * xt;
    r.y.push_back(d.C.dot(r.h_last));
  }
  return r;
}

std::vector<double> conv_kernel(const DiscreteSsm& d, std::size_t length) {
  if (length == 0) throw ContractError("conv_kernel: length must be at least 1");
  std::vector<double> k;
  k.reserve(length);
  Eigen::VectorXd v = d.B_bar;
  for (std::size_t i = 0; i < length; ++i) {
    k.push_back(d.C.dot(v));
    v = d.A_bar * v;
  }
  return k;
}

std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> x) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t taps = std::min(kernel.size(), t + 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < taps; ++k) acc += kernel[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}

namespace {

struct Broadcast {
  std::vector<double> delta, A, skip;
};

Broadcast expand(const SelectiveParams& p, std::span<const double> x, std::size_t D,
                 std::span<const double> skip) {
  const std::size_t L = p.L, N = p.N;
  if (p.delta.size() != L || p.B.size() != L * N || p.C.size() != L * N || p.A.size() != N) {
    throw DimensionError("selective_scan: parameter sizes do not match L=" + std::to_string(L) +
                         ", N=" + std::to_string(N));
  }
  if (x.size() != L * D) {
    throw DimensionError("selective_scan: x has " + std::to_string(x.size()) +
                         " values, expected L×D = " + std::to_string(L * D));
  }
  if (!skip.empty() && skip.size() != D) {
    throw DimensionError("selective_scan: skip has " + std::to_string(skip.size()) +
                         " values for " + std::to_string(D) + " channels");
  }
  Broadcast b;
  b.delta.resize(L * D);
  for (std::size_t t = 0; t < L; ++t) {
    if (!(p.delta[t] > 0.0)) {
      throw ContractError("selective_scan: non-positive delta at step " + std::to_string(t));
    }
    std::fill_n(b.delta.begin() + static_cast<std::ptrdiff_t>(t * D), D, p.delta[t]);
  }
  b.A.resize(D * N);
  for (std::size_t d = 0; d < D; ++d) std::copy(p.A.begin(), p.A.end(), b.A.begin() + static_cast<std::ptrdiff_t>(d * N));
  b.skip = skip.empty() ? std::vector<double>(D, 0.0) : std::vector<double>(skip.begin(), skip.end());
  return b;
}

}  // namespace

std::vector<double> selective_scan(const SelectiveParams& p, std::span<const double> x,
                                   std::size_t D, std::span<const double> skip) {
  const Broadcast b = expand(p, x, D, skip);
  std::vector<double> y(p.L * D);
  kernels::serial::selective_scan({x, b.delta, b.A, p.B, p.C, b.skip, {}, p.L, D, p.N},
                                  {y, {}, {}});
  return y;
}

std::vector<double> selective_scan_chunked(const SelectiveParams& p, std::span<const double> x,
                                           std::size_t D, std::size_t chunk,
                                           std::span<const double> skip) {
  const Broadcast b = expand(p, x, D, skip);
  std::vector<double> y(p.L * D);
  kernels::parallel::selective_scan_chunked(
      {x, b.delta, b.A, p.B, p.C, b.skip, {}, p.L, D, p.N}, {y, {}, {}}, chunk);
  return y;
}

}  // namespace sslalm::ssm
