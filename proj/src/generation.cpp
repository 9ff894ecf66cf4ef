#include "sslalm/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sslalm/data.hpp"
#include "sslalm/errors.hpp"

namespace sslalm::gen {

void SamplerConfig::validate() const {
  if (!(temperature >= 0.0)) throw ConfigError("sampler: temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler: top_p must lie in (0, 1]");
  if (top_k < 1) throw ConfigError("sampler: top_k must be at least 1");
  if (!(repetition_penalty >= 1.0)) throw ConfigError("sampler: repetition_penalty must be >= 1");
}

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> penalized(std::span<const double> logits, std::span<const int> history,
                              double penalty) {
  std::vector<double> out(logits.begin(), logits.end());
  if (penalty == 1.0) return out;
  const std::set<int> seen(history.begin(), history.end());
  for (int id : seen) {
    if (id < 0 || static_cast<std::size_t>(id) >= out.size()) continue;
    double& z = out[static_cast<std::size_t>(id)];
    z = z > 0.0 ? z / penalty : z * penalty;
  }
  return out;
}

// Descending probability, ascending id on ties.
std::vector<std::size_t> ranked(std::span<const double> p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return order;
}

void normalize(std::vector<double>& p) {
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(s > 0.0)) throw ContractError("sampler: distribution has no mass left");
  for (double& x : p) x /= s;
}

}  // namespace

std::vector<double> sampling_distribution(std::span<const double> logits,
                                          std::span<const int> history, const SamplerConfig& cfg) {
  if (logits.empty()) throw ContractError("sampler: empty logits");
  for (double z : logits) {
    if (!std::isfinite(z)) throw ContractError("sampler: non-finite logit");
  }
  const std::vector<double> z = penalized(logits, history, cfg.repetition_penalty);
  std::vector<double> p(z.size(), 0.0);
  if (cfg.temperature == 0.0) {
    p[argmax(z)] = 1.0;
    return p;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp((z[i] - zmax) / cfg.temperature);
  normalize(p);

  const std::vector<std::size_t> order = ranked(p);
  const std::size_t k = std::min(cfg.top_k, p.size());
  for (std::size_t r = k; r < order.size(); ++r) p[order[r]] = 0.0;
  normalize(p);

  if (cfg.top_p < 1.0) {
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < k) {
      cum += p[order[keep]];
      ++keep;
      if (cum >= cfg.top_p) break;
    }
    for (std::size_t r = keep; r < k; ++r) p[order[r]] = 0.0;
    normalize(p);
  }
  return p;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int sample_next(std::span<const double> logits, std::span<const int> history,
                const SamplerConfig& cfg, std::mt19937_64& rng) {
  const std::vector<double> p = sampling_distribution(logits, history, cfg);
  if (cfg.temperature == 0.0) return static_cast<int>(argmax(p));
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    cum += p[i];
    last = i;
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(last);
}

Generation generate(const LalmModel& model, const Tensor& audio_tokens,
                    std::span<const int> prompt, const SamplerConfig& cfg) {
  cfg.validate();
  const LanguageModel& lm = model.lm();
  const std::size_t K = audio_tokens.defined() ? audio_tokens.dim(0) : 0;
  if (K + prompt.size() > lm.config().max_seq) {
    throw ContractError("generate: prompt of " + std::to_string(K + prompt.size()) +
                        " positions exceeds max_seq " + std::to_string(lm.config().max_seq));
  }
  Generation out;
  if (cfg.max_new_tokens == 0) return out;
  if (K + prompt.size() == 0) throw ContractError("generate: nothing to condition on");

  auto state = lm.initial_state();
  std::vector<double> logits;
  const std::size_t D = lm.config().d_model;
  for (std::size_t r = 0; r < K; ++r) {
    logits = lm.step_embedding(audio_tokens.data().subspan(r * D, D), state);
  }
  for (int id : prompt) logits = lm.step_token(id, state);

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> history;
  if (cfg.penalize_prompt) history.assign(prompt.begin(), prompt.end());
  while (out.ids.size() < cfg.max_new_tokens) {
    const int id = sample_next(logits, history, cfg, rng);
    if (id == data::kEos) break;
    out.ids.push_back(id);
    history.push_back(id);
    if (state.position >= lm.config().max_seq) break;
    if (out.ids.size() < cfg.max_new_tokens) logits = lm.step_token(id, state);
  }
  out.text = data::detokenize(out.ids);
  return out;
}

std::vector<int> generate_full_forward(const LalmModel& model, const Tensor& audio_tokens,
                                       std::span<const int> prompt, std::size_t max_new_tokens) {
  const LanguageModel& lm = model.lm();
  const std::size_t K = audio_tokens.defined() ? audio_tokens.dim(0) : 0;
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  const std::size_t V = lm.config().vocab_size;
  while (out.size() < max_new_tokens) {
    const Tensor logits = lm.forward(audio_tokens, seq);
    const std::size_t last = logits.dim(0) - 1;
    const int id = static_cast<int>(argmax(logits.data().subspan(last * V, V)));
    if (id == data::kEos) break;
    out.push_back(id);
    if (K + seq.size() >= lm.config().max_seq) break;
    seq.push_back(id);
  }
  return out;
}

}  // namespace sslalm::gen
