#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sslalm/language_model.hpp"
#include "sslalm/mamba_block.hpp"
#include "sslalm/model.hpp"
#include "sslalm/params.hpp"
#include "sslalm/tensor.hpp"

namespace sslalm::testing {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

// Scalar probe Σ out ⊙ R with a fixed random R, so every output element
// contributes a distinct weight to the gradient.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed);

// One finite-difference case: draws random inputs and returns the max
// relative gradient error.
struct GradCase {
  std::string name;
  std::function<double(std::mt19937_64&)> run;
};
// Every differentiable op plus block_forward.
std::vector<GradCase> grad_cases();

// block_forward at the grad_cases point, checked against a five-point stencil
// (step 3e-4, truncation O(h^4)) instead of central differences. Returns the
// max error relative to max(|analytic|, |numeric|, 1e-6). Resolves components
// that the central-difference check cannot separate from rounding.
double block_stencil_error(std::mt19937_64& rng);

// Block with random weights of moderate size (A_log, dt bias kept in the
// usual init ranges). The store owns the tensors.
struct RandomBlock {
  ParamStore store;
  BlockWeights weights;
};
RandomBlock random_block(const BlockConfig& cfg, std::uint64_t seed, bool with_lora = false);

// Tiny text-only language model with random weights.
struct RandomLm {
  ParamStore store;
  LanguageModel lm;
};
RandomLm random_lm(const LmConfig& cfg, std::uint64_t seed, bool random_lora = false);

// Toy audio LM config, smaller than the toy preset so tests stay fast.
LalmConfig tiny_lalm_config();

// Fills every parameter with fresh random values (including LoRA B, which
// starts at zero) so the whole model is exercised.
void randomize(ParamStore& store, std::uint64_t seed, double scale = 0.3);

}  // namespace sslalm::testing
