#pragma once

#include <functional>

#include "sslalm/tensor.hpp"

namespace sslalm {

// Compares the reverse-mode gradient of `f` at `point` with central
// differences (f(x+eps) - f(x-eps)) / (2·eps). Returns the largest elementwise
// relative error, using max(|analytic|, |numeric|, 1e-8) as denominator.
// `f` must return a scalar; `point` is perturbed in place and restored.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double eps = 1e-5);

// Same, over several inputs at once: every tensor in `points` is checked.
double grad_check_multi(const std::function<Tensor(std::span<const Tensor>)>& f,
                        std::vector<Tensor> points, double eps = 1e-5);

}  // namespace sslalm
