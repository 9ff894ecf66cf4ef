#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sslalm/model.hpp"

namespace sslalm::gen {

struct SamplerConfig {
  double temperature = 0.1;  // 0 means greedy
  std::size_t top_k = 500;
  double top_p = 0.95;
  double repetition_penalty = 1.1;
  std::size_t max_new_tokens = 64;
  std::uint64_t seed = 0;
  // Also penalize ids that appear in the prompt.
  bool penalize_prompt = false;

  void validate() const;
};

// The distribution sample_next draws from, after penalty, temperature, top-k
// and top-p. Masked ids have probability exactly 0.
std::vector<double> sampling_distribution(std::span<const double> logits,
                                          std::span<const int> history, const SamplerConfig& cfg);

// Uniform in [0, 1) from the top 53 bits of one engine draw.
double uniform01(std::mt19937_64& rng);

// Temperature 0 takes the argmax (smallest id on ties) and never touches rng.
int sample_next(std::span<const double> logits, std::span<const int> history,
                const SamplerConfig& cfg, std::mt19937_64& rng);

struct Generation {
  std::vector<int> ids;  // generated ids, end token excluded
  std::string text;
};

// Streams the audio tokens and prompt through the recurrent state, then
// samples until the end token or max_new_tokens.
Generation generate(const LalmModel& model, const Tensor& audio_tokens,
                    std::span<const int> prompt, const SamplerConfig& cfg);

// Greedy decoding that re-runs the full forward over the growing sequence at
// every step. Slow; used to check the streaming path.
std::vector<int> generate_full_forward(const LalmModel& model, const Tensor& audio_tokens,
                                       std::span<const int> prompt, std::size_t max_new_tokens);

}  // namespace sslalm::gen
