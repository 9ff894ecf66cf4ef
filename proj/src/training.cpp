#include "sslalm/training.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sslalm/data.hpp"
#include "sslalm/errors.hpp"
#include "sslalm/ops.hpp"

namespace sslalm::train {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (batch_size == 0 || accum_steps == 0) {
    throw ConfigError("train: batch_size and accum_steps must be at least 1");
  }
}

bool is_frozen(const std::string& name, std::span<const std::string> plan) {
  bool frozen = false;
  for (const std::string& p : plan) {
    const bool negate = !p.empty() && p[0] == '!';
    const std::string glob = negate ? p.substr(1) : p;
    if (::fnmatch(glob.c_str(), name.c_str(), 0) == 0) frozen = !negate;
  }
  return frozen;
}

TrainableCounts count_trainable(const std::vector<ParamSpec>& specs,
                                std::span<const std::string> plan) {
  TrainableCounts c;
  for (const ParamSpec& s : specs) {
    if (is_frozen(s.name, plan)) continue;
    const std::size_t n = shape_numel(s.shape);
    const std::string group = param_group(s.name);
    if (group == "encoder") c.encoder += n;
    else if (group == "bridge") c.bridge += n;
    else if (group == "lora") c.lora += n;
    else c.lm += n;
    c.total += n;
  }
  if (c.total == 0) throw ConfigError("train: freeze plan leaves no trainable parameters");
  return c;
}

TrainableCounts count_trainable(const LalmConfig& cfg, std::span<const std::string> plan) {
  return count_trainable(model_param_specs(cfg), plan);
}

void AdamW::step(ParamStore& store, std::span<const std::string> names, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const std::string& name : names) {
    Tensor& p = store.get(name);
    auto w = p.mutable_data();
    auto g = p.grad_view();
    Moments& mom = state_[name];
    if (mom.m.empty()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * grad_scale;
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

Trainer::Trainer(LalmModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), opt_(cfg) {
  cfg_.validate();
  for (auto& [name, t] : model_.params().entries()) {
    const bool trainable = !is_frozen(name, cfg_.freeze_plan);
    t.set_requires_grad(trainable);
    t.drop_grad();
    if (trainable) {
      trainable_.push_back(name);
      trainable_count_ += t.numel();
    }
  }
  if (trainable_count_ == 0) {
    throw ConfigError("train: freeze plan leaves no trainable parameters");
  }
}

namespace {

Tensor example_loss(const LalmModel& model, const Example& ex) {
  const Tensor audio = model.audio_tokens(ex.spectrogram);
  const TokenSequence seq = data::build_sequence(ex.question, ex.answer, audio.dim(0),
                                                 model.config().include_question_loss);
  return next_token_loss(model.lm().forward(audio, seq.ids), seq);
}

}  // namespace

StepMetrics Trainer::train_step(std::span<const Example> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (const Example& ex : batch) {
    Graph graph;
    Graph::Scope scope(graph);
    const std::string where = " on example '" + ex.id + "' (micro-batch " + std::to_string(micro_) + ")";
    Tensor loss;
    try {
      loss = example_loss(model_, ex);
    } catch (const NumericError& e) {
      throw NumericError(std::string("train_step: ") + e.what() + where);
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("train_step: non-finite loss " + std::to_string(value) + where);
    }
    loss_sum += value;
    backward(graph, ops::scale(loss, inv_b));
  }
  ++micro_;

  StepMetrics m;
  m.loss = loss_sum * inv_b;
  m.trainable = trainable_count_;
  m.grad_norm = grad_norm();
  if (micro_ % cfg_.accum_steps == 0) {
    opt_.step(model_.params(), trainable_, 1.0 / static_cast<double>(cfg_.accum_steps));
    for (const std::string& name : trainable_) model_.params().get(name).zero_grad();
    m.updated = true;
  }
  m.step = opt_.steps();
  return m;
}

double Trainer::evaluate_loss(std::span<const Example> batch) const {
  if (batch.empty()) throw ContractError("evaluate_loss: empty batch");
  double sum = 0.0;
  for (const Example& ex : batch) sum += example_loss(model_, ex).item();
  return sum / static_cast<double>(batch.size());
}

double Trainer::grad_norm() const {
  const double scale = 1.0 / static_cast<double>(cfg_.accum_steps);
  double ss = 0.0;
  for (const std::string& name : trainable_) {
    for (double g : model_.params().get(name).grad_view()) ss += (g * scale) * (g * scale);
  }
  return std::sqrt(ss);
}

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : os_(path, append ? std::ios::app : std::ios::trunc) {
  if (!os_) throw DataError("cannot open metrics log " + path.string());
  os_.precision(17);
}

MetricsLog::~MetricsLog() { os_.flush(); }

void MetricsLog::write(std::size_t step, double loss, double grad_norm) {
  os_ << step << '\t' << loss << '\t' << grad_norm << '\n';
  if (++pending_ >= 10) {
    os_.flush();
    pending_ = 0;
  }
}

std::vector<std::size_t> batch_indices(std::size_t n_examples, std::size_t batch_size,
                                       std::size_t micro, std::uint64_t seed) {
  if (n_examples == 0) throw ContractError("batch_indices: no examples");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n_examples);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t g = micro * batch_size + b;
    const std::size_t epoch = g / n_examples;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch)};
      std::mt19937_64 rng(seq);
      for (std::size_t i = n_examples; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[g % n_examples]);
  }
  return out;
}

FitResult fit(Trainer& trainer, std::span<const Example> examples, const TrainConfig& cfg,
              MetricsLog* log) {
  FitResult result;
  std::vector<Example> batch;
  while (trainer.optimizer().steps() < cfg.max_steps) {
    const std::size_t step = trainer.optimizer().steps();
    double window = 0.0;
    StepMetrics last;
    for (std::size_t a = 0; a < cfg.accum_steps; ++a) {
      batch.clear();
      const std::size_t micro = step * cfg.accum_steps + a;
      for (std::size_t i : batch_indices(examples.size(), cfg.batch_size, micro, cfg.seed)) {
        batch.push_back(examples[i]);
      }
      last = trainer.train_step(batch);
      window += last.loss;
    }
    const double loss = window / static_cast<double>(cfg.accum_steps);
    result.losses.push_back(loss);
    if (log) log->write(last.step, loss, last.grad_norm);
  }
  result.steps = trainer.optimizer().steps();
  return result;
}

}  // namespace sslalm::train
