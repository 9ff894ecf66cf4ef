#include "sslalm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sslalm/errors.hpp"
#include "sslalm/kernels.hpp"

namespace sslalm::ops {

namespace kp = kernels::parallel;

namespace {

Graph* recording(std::initializer_list<const Tensor*> inputs) {
  Graph* g = Graph::active();
  if (!g) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return g;
  }
  return nullptr;
}

Tensor make(Shape shape, std::vector<double> data, Graph* g) {
  return Tensor::from(std::move(shape), std::move(data), g != nullptr);
}

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
  throw DimensionError(op + ": " + detail);
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    dim_error(op, std::string(name) + " must be rank " + std::to_string(rank) + ", got " +
                      shape_str(t.shape()));
  }
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const std::string& op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    dim_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Broadcast { kSame, kRow };

Broadcast broadcast_kind(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) return Broadcast::kRow;
  dim_error(op, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kExpMax = 700.0;
constexpr double kLogMin = 1e-300;

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  Graph* g = recording({&x});
  Tensor y = make(x.shape(), std::move(out), g);
  if (g) {
    g->record(name, {x}, y, [x, y, deriv]() mutable {
      auto gy = y.grad_view();
      auto xd = x.data();
      auto yd = y.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xd[i], yd[i]);
    });
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    dim_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kp::gemm_nn(a.data(), b.data(), out, {m, n, k});
  Graph* g = recording({&a, &b});
  Tensor y = make({m, n}, std::move(out), g);
  if (g) {
    g->record("matmul", {a, b}, y, [a, b, y, m, n, k]() mutable {
      auto gy = y.grad_view();
      if (a.requires_grad()) kp::gemm_nt(gy, b.data(), a.grad(), {m, k, n}, true);
      if (b.requires_grad()) kp::gemm_tn(a.data(), gy, b.grad(), {k, n, m}, true);
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", weight, 2, "weight");
  const std::size_t rows = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    dim_error("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
    dim_error("linear", "bias " + shape_str(bias.shape()) + " vs out dim " + std::to_string(outd));
  }
  std::vector<double> out(rows * outd);
  kp::gemm_nt(x.data(), weight.data(), out, {rows, outd, in});
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < outd; ++o) out[r * outd + o] += bd[o];
    }
  }
  Graph* g = recording({&x, &weight, &bias});
  Tensor y = make({rows, outd}, std::move(out), g);
  if (g) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    g->record("linear", std::move(inputs), y, [x, weight, bias, y, rows, in, outd]() mutable {
      auto gy = y.grad_view();
      if (x.requires_grad()) kp::gemm_nn(gy, weight.data(), x.grad(), {rows, in, outd}, true);
      if (weight.requires_grad()) kp::gemm_tn(gy, x.data(), weight.grad(), {outd, in, rows}, true);
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t o = 0; o < outd; ++o) gb[o] += gy[r * outd + o];
        }
      }
    });
  }
  return y;
}

namespace {

// Shared body of add/sub/mul: elementwise with optional row broadcast of b.
enum class Binary { kAdd, kSub, kMul };

Tensor binary(const char* name, Binary kind, const Tensor& a, const Tensor& b) {
  const Broadcast bc = broadcast_kind(name, a, b);
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t bn = bd.size();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double bv = bc == Broadcast::kSame ? bd[i] : bd[i % bn];
    switch (kind) {
      case Binary::kAdd: out[i] = ad[i] + bv; break;
      case Binary::kSub: out[i] = ad[i] - bv; break;
      case Binary::kMul: out[i] = ad[i] * bv; break;
    }
  }
  Graph* g = recording({&a, &b});
  Tensor y = make(a.shape(), std::move(out), g);
  if (g) {
    g->record(name, {a, b}, y, [a, b, y, bc, bn, kind]() mutable {
      auto gy = y.grad_view();
      auto ad = a.data();
      auto bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double bv = bc == Broadcast::kSame ? bd[i] : bd[i % bn];
          ga[i] += kind == Binary::kMul ? gy[i] * bv : gy[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const std::size_t j = bc == Broadcast::kSame ? i : i % bn;
          switch (kind) {
            case Binary::kAdd: gb[j] += gy[i]; break;
            case Binary::kSub: gb[j] -= gy[i]; break;
            case Binary::kMul: gb[j] += gy[i] * ad[i]; break;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Binary::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Binary::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Binary::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid(v); },
      [](double v, double) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      // Floored so that a step size produced by softplus is never exactly 0.
      [](double v) { return std::max(v > 30.0 ? v : std::log1p(std::exp(v)), 1e-300); },
      [](double v, double) { return sigmoid(v); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(std::min(v, kExpMax)); },
      [](double v, double y) { return v > kExpMax ? 0.0 : y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(std::max(v, kLogMin)); },
      [](double v, double) { return v < kLogMin ? 0.0 : 1.0 / v; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("softmax", x.shape(), axis);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
    }
  }
  Graph* g = recording({&x});
  Tensor y = make(x.shape(), std::move(out), g);
  if (g) {
    g->record("softmax", {x}, y, [x, y, s]() mutable {
      auto gy = y.grad_view();
      auto yd = y.data();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.len; ++j) {
            dot += gy[base + j * s.inner] * yd[base + j * s.inner];
          }
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t idx = base + j * s.inner;
            gx[idx] += yd[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
  if (x.rank() < 1) dim_error("rms_norm", "input must have rank >= 1");
  const std::size_t D = x.shape().back();
  if (weight.rank() != 1 || weight.dim(0) != D) {
    dim_error("rms_norm", "weight " + shape_str(weight.shape()) + " vs feature dim " +
                              std::to_string(D));
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(D, 1);
  auto xd = x.data();
  auto wd = weight.data();
  std::vector<double> out(xd.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < D; ++j) ss += xd[r * D + j] * xd[r * D + j];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(D) + eps);
    for (std::size_t j = 0; j < D; ++j) out[r * D + j] = xd[r * D + j] * inv[r] * wd[j];
  }
  Graph* g = recording({&x, &weight});
  Tensor y = make(x.shape(), std::move(out), g);
  if (g) {
    g->record("rms_norm", {x, weight}, y, [x, weight, y, inv, rows, D]() mutable {
      auto gy = y.grad_view();
      auto xd = x.data();
      auto wd = weight.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double ir = inv[r];
        if (x.requires_grad()) {
          auto gx = x.grad();
          double dot = 0.0;
          for (std::size_t j = 0; j < D; ++j) dot += gy[r * D + j] * wd[j] * xd[r * D + j];
          const double c = ir * ir * ir * dot / static_cast<double>(D);
          for (std::size_t j = 0; j < D; ++j) {
            gx[r * D + j] += ir * wd[j] * gy[r * D + j] - c * xd[r * D + j];
          }
        }
        if (weight.requires_grad()) {
          auto gw = weight.grad();
          for (std::size_t j = 0; j < D; ++j) gw[j] += gy[r * D + j] * xd[r * D + j] * ir;
        }
      }
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank("conv2d", x, 3, "input");
  require_rank("conv2d", weight, 4, "weight");
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::size_t Cout = weight.dim(0), KH = weight.dim(1), KW = weight.dim(2);
  if (weight.dim(3) != Cin) {
    dim_error("conv2d", "input channels " + std::to_string(Cin) + " vs weight " +
                            shape_str(weight.shape()));
  }
  if (stride == 0) dim_error("conv2d", "stride must be positive");
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    dim_error("conv2d", "kernel " + shape_str(weight.shape()) + " larger than padded input " +
                            shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    dim_error("conv2d", "bias " + shape_str(bias.shape()) + " vs " + std::to_string(Cout) +
                            " output channels");
  }
  const std::size_t Ho = (H + 2 * pad - KH) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - KW) / stride + 1;
  const std::size_t P = Ho * Wo, K = KH * KW * Cin;

  // im2col: row p holds the receptive field of output pixel p.
  std::vector<double> cols(P * K, 0.0);
  auto xd = x.data();
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      double* row = cols.data() + (oh * Wo + ow) * K;
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                  static_cast<std::ptrdiff_t>(pad);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kw = 0; kw < KW; ++kw) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
          std::copy_n(xd.data() + (ih * W + iw) * Cin, Cin, row + (kh * KW + kw) * Cin);
        }
      }
    }
  }
  std::vector<double> out(P * Cout);
  kp::gemm_nt(cols, weight.data(), out, {P, Cout, K});
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < Cout; ++c) out[p * Cout + c] += bd[c];
    }
  }
  Graph* g = recording({&x, &weight, &bias});
  Tensor y = make({Ho, Wo, Cout}, std::move(out), g);
  if (g) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    g->record("conv2d", std::move(inputs), y,
              [x, weight, bias, y, cols = std::move(cols), H, W, Cin, Cout, KH, KW, Ho, Wo, P,
               K, stride, pad]() mutable {
                auto gy = y.grad_view();
                if (weight.requires_grad()) {
                  kp::gemm_tn(gy, cols, weight.grad(), {Cout, K, P}, true);
                }
                if (bias.defined() && bias.requires_grad()) {
                  auto gb = bias.grad();
                  for (std::size_t p = 0; p < P; ++p) {
                    for (std::size_t c = 0; c < Cout; ++c) gb[c] += gy[p * Cout + c];
                  }
                }
                if (x.requires_grad()) {
                  std::vector<double> dcols(P * K);
                  kp::gemm_nn(gy, weight.data(), dcols, {P, K, Cout});
                  auto gx = x.grad();
                  for (std::size_t oh = 0; oh < Ho; ++oh) {
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                      const double* row = dcols.data() + (oh * Wo + ow) * K;
                      for (std::size_t kh = 0; kh < KH; ++kh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kw = 0; kw < KW; ++kw) {
                          const std::ptrdiff_t iw =
                              static_cast<std::ptrdiff_t>(ow * stride + kw) -
                              static_cast<std::ptrdiff_t>(pad);
                          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                          double* dst = gx.data() + (ih * W + iw) * Cin;
                          const double* src = row + (kh * KW + kw) * Cin;
                          for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
                        }
                      }
                    }
                  }
                }
              });
  }
  return y;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t pad) {
  require_rank("depthwise_conv1d", x, 2, "input");
  require_rank("depthwise_conv1d", weight, 2, "weight");
  const std::size_t L = x.dim(0), C = x.dim(1), K = weight.dim(1);
  if (weight.dim(0) != C) {
    dim_error("depthwise_conv1d",
              "channels " + std::to_string(C) + " vs weight " + shape_str(weight.shape()));
  }
  if (L + pad < K) dim_error("depthwise_conv1d", "kernel longer than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != C)) {
    dim_error("depthwise_conv1d", "bias " + shape_str(bias.shape()));
  }
  const std::size_t Lo = L + pad - K + 1;
  auto xd = x.data();
  auto wd = weight.data();
  std::vector<double> out(Lo * C);
  for (std::size_t t = 0; t < Lo; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = bias.defined() ? bias[c] : 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
        acc += wd[c * K + k] * xd[src * C + c];
      }
      out[t * C + c] = acc;
    }
  }
  Graph* g = recording({&x, &weight, &bias});
  Tensor y = make({Lo, C}, std::move(out), g);
  if (g) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    g->record("depthwise_conv1d", std::move(inputs), y,
              [x, weight, bias, y, L, C, K, Lo, pad]() mutable {
                auto gy = y.grad_view();
                auto xd = x.data();
                auto wd = weight.data();
                const bool gx_on = x.requires_grad();
                const bool gw_on = weight.requires_grad();
                std::span<double> gx = gx_on ? x.grad() : std::span<double>{};
                std::span<double> gw = gw_on ? weight.grad() : std::span<double>{};
                for (std::size_t t = 0; t < Lo; ++t) {
                  for (std::size_t c = 0; c < C; ++c) {
                    const double go = gy[t * C + c];
                    for (std::size_t k = 0; k < K; ++k) {
                      const std::ptrdiff_t src =
                          static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
                      if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                      if (gx_on) gx[src * C + c] += go * wd[c * K + k];
                      if (gw_on) gw[c * K + k] += go * xd[src * C + c];
                    }
                  }
                }
                if (bias.defined() && bias.requires_grad()) {
                  auto gb = bias.grad();
                  for (std::size_t t = 0; t < Lo; ++t) {
                    for (std::size_t c = 0; c < C; ++c) gb[c] += gy[t * C + c];
                  }
                }
              });
  }
  return y;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding_lookup", table, 2, "table");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<double> out(ids.size() * D);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      dim_error("embedding_lookup",
                "id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(td.data() + ids[i] * D, D, out.data() + i * D);
  }
  Graph* g = recording({&table});
  Tensor y = make({ids.size(), D}, std::move(out), g);
  if (g) {
    std::vector<int> idv(ids.begin(), ids.end());
    g->record("embedding_lookup", {table}, y, [table, y, idv, D]() mutable {
      auto gy = y.grad_view();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        for (std::size_t j = 0; j < D; ++j) gt[idv[i] * D + j] += gy[i * D + j];
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    dim_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto xd = x.data();
  Graph* g = recording({&x});
  Tensor y = make(std::move(shape), std::vector<double>(xd.begin(), xd.end()), g);
  if (g) {
    g->record("reshape", {x}, y, [x, y]() mutable { x.accumulate_grad(y.grad_view()); });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2, "input");
  const std::size_t R = x.dim(0), C = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = xd[r * C + c];
  }
  Graph* g = recording({&x});
  Tensor y = make({C, R}, std::move(out), g);
  if (g) {
    g->record("transpose", {x}, y, [x, y, R, C]() mutable {
      auto gy = y.grad_view();
      auto gx = x.grad();
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += gy[c * R + r];
      }
    });
  }
  return y;
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis("mean", x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xd = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xd[(o * s.len + j) * s.inner + i];
      }
    }
  }
  for (double& v : out) v /= static_cast<double>(s.len);
  Graph* g = recording({&x});
  Tensor y = make(std::move(out_shape), std::move(out), g);
  if (g) {
    g->record("mean", {x}, y, [x, y, s]() mutable {
      auto gy = y.grad_view();
      auto gx = x.grad();
      const double inv = 1.0 / static_cast<double>(s.len);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.len; ++j) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            gx[(o * s.len + j) * s.inner + i] += gy[o * s.inner + i] * inv;
          }
        }
      }
    });
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Graph* g = recording({&x});
  Tensor y = make({}, {acc}, g);
  if (g) {
    g->record("sum", {x}, y, [x, y]() mutable {
      const double gy = y.grad_view()[0];
      for (double& v : x.grad()) v += gy;
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.numel(), 1)));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end) {
  const AxisSplit s = split_axis("slice", x.shape(), axis);
  if (start > end || end > s.len) {
    dim_error("slice", "range [" + std::to_string(start) + "," + std::to_string(end) +
                           ") outside axis of length " + std::to_string(s.len));
  }
  const std::size_t n = end - start;
  Shape out_shape = x.shape();
  out_shape[axis] = n;
  auto xd = x.data();
  std::vector<double> out(s.outer * n * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + (o * s.len + start) * s.inner, n * s.inner,
                out.data() + o * n * s.inner);
  }
  Graph* g = recording({&x});
  Tensor y = make(std::move(out_shape), std::move(out), g);
  if (g) {
    g->record("slice", {x}, y, [x, y, s, start, n]() mutable {
      auto gy = y.grad_view();
      auto gx = x.grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < n * s.inner; ++i) {
          gx[(o * s.len + start) * s.inner + i] += gy[o * n * s.inner + i];
        }
      }
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) dim_error("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  const AxisSplit s0 = split_axis("concat", ref, axis);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) dim_error("concat", "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    if (a != b) dim_error("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<double> out(s0.outer * total * s0.inner);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t n = p.dim(axis);
    auto pd = p.data();
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy_n(pd.data() + o * n * s0.inner, n * s0.inner,
                  out.data() + (o * total + offset) * s0.inner);
    }
    offset += n;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  Graph* g = Graph::active();
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) g = nullptr;
  Tensor y = make(std::move(out_shape), std::move(out), g);
  if (g) {
    g->record("concat", inputs, y, [inputs, y, s0, total]() mutable {
      auto gy = y.grad_view();
      std::size_t offset = 0;
      for (Tensor& p : inputs) {
        const std::size_t len = p.numel() / (s0.outer * s0.inner);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t o = 0; o < s0.outer; ++o) {
            for (std::size_t i = 0; i < len * s0.inner; ++i) {
              gp[o * len * s0.inner + i] += gy[(o * total + offset) * s0.inner + i];
            }
          }
        }
        offset += len;
      }
    });
  }
  return y;
}

Tensor flip_rows(const Tensor& x) {
  if (x.rank() < 1) dim_error("flip_rows", "input must have rank >= 1");
  const std::size_t R = x.dim(0), W = x.numel() / std::max<std::size_t>(R, 1);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < R; ++r) std::copy_n(xd.data() + (R - 1 - r) * W, W, out.data() + r * W);
  Graph* g = recording({&x});
  Tensor y = make(x.shape(), std::move(out), g);
  if (g) {
    g->record("flip_rows", {x}, y, [x, y, R, W]() mutable {
      auto gy = y.grad_view();
      auto gx = x.grad();
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t i = 0; i < W; ++i) gx[(R - 1 - r) * W + i] += gy[r * W + i];
      }
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2, "logits");
  const std::size_t R = logits.dim(0), V = logits.dim(1);
  if (targets.size() != R) {
    dim_error("cross_entropy", std::to_string(targets.size()) + " targets for " +
                                   std::to_string(R) + " rows");
  }
  std::size_t count = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(V)) {
      dim_error("cross_entropy", "target " + std::to_string(t) + " outside " + std::to_string(V) + " classes");
    }
    if (t >= 0) ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: no rows selected by the loss mask");
  auto ld = logits.data();
  std::vector<double> probs(R * V, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (targets[r] < 0) continue;
    const double* row = ld.data() + r * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t v = 0; v < V; ++v) probs[r * V + v] = std::exp(row[v] - lse);
  }
  const double inv = 1.0 / static_cast<double>(count);
  Graph* g = recording({&logits});
  Tensor y = make({}, {total * inv}, g);
  if (g) {
    std::vector<int> tv(targets.begin(), targets.end());
    g->record("cross_entropy", {logits}, y,
              [logits, y, probs = std::move(probs), tv, R, V, inv]() mutable {
                const double gy = y.grad_view()[0] * inv;
                auto gl = logits.grad();
                for (std::size_t r = 0; r < R; ++r) {
                  if (tv[r] < 0) continue;
                  for (std::size_t v = 0; v < V; ++v) gl[r * V + v] += gy * probs[r * V + v];
                  gl[r * V + tv[r]] -= gy;
                }
              });
  }
  return y;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& skip) {
  require_rank("selective_scan", u, 2, "u");
  require_rank("selective_scan", A, 2, "A");
  const std::size_t L = u.dim(0), D = u.dim(1), N = A.dim(1);
  if (delta.shape() != u.shape()) dim_error("selective_scan", "delta " + shape_str(delta.shape()) + " vs u " + shape_str(u.shape()));
  if (A.dim(0) != D) dim_error("selective_scan", "A " + shape_str(A.shape()) + " vs channels " + std::to_string(D));
  const Shape ln{L, N};
  if (B.shape() != ln) dim_error("selective_scan", "B " + shape_str(B.shape()) + " expected " + shape_str(ln));
  if (C.shape() != ln) dim_error("selective_scan", "C " + shape_str(C.shape()) + " expected " + shape_str(ln));
  if (skip.shape() != Shape{D}) dim_error("selective_scan", "skip " + shape_str(skip.shape()));
  for (double d : delta.data()) {
    if (std::isnan(d)) throw NumericError("selective_scan: delta is NaN");
    if (!(d > 0.0)) throw ContractError("selective_scan: non-positive delta " + std::to_string(d));
  }

  kernels::ScanArgs args{u.data(), delta.data(), A.data(), B.data(), C.data(), skip.data(), {}, L, D, N};
  Graph* g = recording({&u, &delta, &A, &B, &C, &skip});
  std::vector<double> out(L * D);
  std::vector<double> states(g ? L * D * N : 0);
  kp::selective_scan(args, {out, {}, states});
  Tensor y = make({L, D}, std::move(out), g);
  if (g) {
    g->record("selective_scan", {u, delta, A, B, C, skip}, y,
              [u, delta, A, B, C, skip, y, states = std::move(states), L, D, N]() mutable {
                kernels::ScanArgs args{u.data(), delta.data(), A.data(), B.data(),
                                       C.data(), skip.data(), {}, L, D, N};
                std::vector<double> du(L * D, 0.0), ddelta(L * D, 0.0), dA(D * N, 0.0),
                    dB(L * N, 0.0), dC(L * N, 0.0), dskip(D, 0.0);
                kp::selective_scan_backward(args, states, y.grad_view(),
                                            {du, ddelta, dA, dB, dC, dskip});
                if (u.requires_grad()) u.accumulate_grad(du);
                if (delta.requires_grad()) delta.accumulate_grad(ddelta);
                if (A.requires_grad()) A.accumulate_grad(dA);
                if (B.requires_grad()) B.accumulate_grad(dB);
                if (C.requires_grad()) C.accumulate_grad(dC);
                if (skip.requires_grad()) skip.accumulate_grad(dskip);
              });
  }
  return y;
}

Tensor forward_suite(std::string_view op, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() < n) {
      throw ContractError(std::string(op) + ": expected " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
    }
  };
  auto opt = [&](std::size_t i) { return in.size() > i ? in[i] : Tensor{}; };
  if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (op == "add") { need(2); return add(in[0], in[1]); }
  if (op == "mul") { need(2); return mul(in[0], in[1]); }
  if (op == "conv2d") { need(2); return conv2d(in[0], in[1], opt(2), attrs.stride, attrs.pad); }
  if (op == "depthwise_conv1d") { need(2); return depthwise_conv1d(in[0], in[1], opt(2), attrs.pad); }
  if (op == "silu") { need(1); return silu(in[0]); }
  if (op == "softmax") { need(1); return softmax(in[0], attrs.axis); }
  if (op == "rms_norm") { need(2); return rms_norm(in[0], in[1], attrs.eps); }
  if (op == "embedding_lookup") { need(1); return embedding_lookup(in[0], attrs.ids); }
  if (op == "reshape") { need(1); return reshape(in[0], attrs.shape); }
  if (op == "transpose") { need(1); return transpose(in[0]); }
  if (op == "mean") { need(1); return mean(in[0], attrs.axis); }
  if (op == "exp") { need(1); return exp(in[0]); }
  if (op == "log") { need(1); return log(in[0]); }
  if (op == "slice") { need(1); return slice(in[0], attrs.axis, attrs.start, attrs.end); }
  if (op == "concat") { need(1); return concat(in, attrs.axis); }
  throw UnsupportedOpError("forward_suite: unsupported op '" + std::string(op) + "'");
}

}  // namespace sslalm::ops
