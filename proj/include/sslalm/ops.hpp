#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "sslalm/tensor.hpp"

// Forward ops with reverse-mode rules. Each op records itself on the active
// Graph when any input requires grad, and is a plain computation otherwise.
// Broadcasting is limited to a 1-D right operand repeated over leading rows.
namespace sslalm::ops {

// 2-D product: [m,k]·[k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// x·Wᵀ + b for x [L,in], W [out,in], b [out] (optional).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
// Inputs are clamped below at 1e-300.
Tensor log(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis: x / sqrt(mean(x²) + eps) · weight.
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-5);

// x is H×W×Cin, weight Cout×kh×kw×Cin, bias Cout (optional).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
// x is L×C, weight C×K. Left zero-padding `pad`; output length L + pad - K + 1.
// pad = K-1 gives the causal form used by the state-space block.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t pad);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
// Reduces `axis`; the axis is removed from the shape.
Tensor mean(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Reverses the order of rows (axis 0).
Tensor flip_rows(const Tensor& x);

// Mean over selected rows of -log softmax(logits[row])[target].
// `targets` has one entry per row; rows with target < 0 are skipped.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Differentiable diagonal selective scan (see kernels::ScanArgs for shapes).
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& skip);

// Attributes consumed by forward_suite.
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  double eps = 1e-5;
  std::size_t start = 0;
  std::size_t end = 0;
  Shape shape;
  std::vector<int> ids;
};

// Dispatches by op name: matmul, add, mul, conv2d, depthwise_conv1d, silu,
// softmax, rms_norm, embedding_lookup, reshape, transpose, mean, exp, log,
// slice, concat. Unknown names throw UnsupportedOpError.
Tensor forward_suite(std::string_view op, std::span<const Tensor> inputs, const OpAttrs& attrs);

}  // namespace sslalm::ops
