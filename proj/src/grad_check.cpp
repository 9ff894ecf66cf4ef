#include "sslalm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "sslalm/errors.hpp"

namespace sslalm {

namespace {

double scalar_value(const Tensor& out) {
  if (out.numel() != 1) {
    throw ContractError("grad_check: function must return a scalar, got shape " +
                        shape_str(out.shape()));
  }
  return out.item();
}

}  // namespace

double grad_check_multi(const std::function<Tensor(std::span<const Tensor>)>& f,
                        std::vector<Tensor> points, double eps) {
  for (Tensor& p : points) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  {
    Graph graph;
    Graph::Scope scope(graph);
    Tensor out = f(points);
    scalar_value(out);
    if (out.requires_grad()) backward(graph, out);
  }

  double worst = 0.0;
  for (Tensor& p : points) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) {
      auto g = p.grad_view();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = scalar_value(f(points));
      data[i] = saved - eps;
      const double down = scalar_value(f(points));
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double eps) {
  return grad_check_multi([&](std::span<const Tensor> in) { return f(in[0]); },
                          {std::move(point)}, eps);
}

}  // namespace sslalm
