#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sslalm/encoder.hpp"
#include "sslalm/model.hpp"
#include "sslalm/params.hpp"

namespace sslalm::train {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::size_t batch_size = 1;
  std::size_t accum_steps = 1;
  std::size_t max_steps = 100;
  std::uint64_t seed = 0;
  // Glob patterns over parameter names; a leading '!' marks a parameter
  // trainable again. The last matching pattern decides; no match = trainable.
  std::vector<std::string> freeze_plan{"lm.*", "!*.lora_*"};

  std::size_t effective_batch() const { return batch_size * accum_steps; }
  void validate() const;
};

bool is_frozen(const std::string& name, std::span<const std::string> plan);

struct TrainableCounts {
  std::size_t encoder = 0;
  std::size_t bridge = 0;
  std::size_t lora = 0;
  std::size_t lm = 0;
  std::size_t total = 0;
};

// Throws ConfigError when the plan leaves nothing trainable.
TrainableCounts count_trainable(const std::vector<ParamSpec>& specs,
                                std::span<const std::string> plan);
TrainableCounts count_trainable(const LalmConfig& cfg, std::span<const std::string> plan);

// Decoupled weight decay Adam. State is keyed by parameter name.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  // One update over `names`, using grad·grad_scale as the gradient.
  void step(ParamStore& store, std::span<const std::string> names, double grad_scale);

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

struct Example {
  std::string id;
  Spectrogram spectrogram;
  std::string question;
  std::string answer;
};

struct StepMetrics {
  std::size_t step = 0;  // optimizer updates applied so far
  double loss = 0.0;     // mean loss over the micro-batch
  double grad_norm = 0.0;
  std::size_t trainable = 0;
  bool updated = false;  // this micro-batch completed an accumulation window
};

class Trainer {
 public:
  // Marks frozen parameters as not requiring grad; throws ConfigError if
  // nothing is left trainable.
  Trainer(LalmModel& model, const TrainConfig& cfg);

  // Forward/backward over one micro-batch. Every accum_steps calls the
  // averaged gradient is applied and cleared.
  StepMetrics train_step(std::span<const Example> batch);

  // Mean loss over `batch` without touching gradients.
  double evaluate_loss(std::span<const Example> batch) const;

  const std::vector<std::string>& trainable_names() const { return trainable_; }
  std::size_t trainable_count() const { return trainable_count_; }
  AdamW& optimizer() { return opt_; }
  const AdamW& optimizer() const { return opt_; }

 private:
  double grad_norm() const;

  LalmModel& model_;
  TrainConfig cfg_;
  AdamW opt_;
  std::vector<std::string> trainable_;
  std::size_t trainable_count_ = 0;
  std::size_t micro_ = 0;
};

// Tab-separated `step\tloss\tgrad_norm` lines, flushed every 10 steps.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path, bool append = false);
  ~MetricsLog();
  void write(std::size_t step, double loss, double grad_norm);

 private:
  std::ofstream os_;
  std::size_t pending_ = 0;
};

// Example indices for micro-batch `micro` (global count): a fresh seeded
// permutation per epoch, so any resume point sees the same sequence.
std::vector<std::size_t> batch_indices(std::size_t n_examples, std::size_t batch_size,
                                       std::size_t micro, std::uint64_t seed);

struct FitResult {
  std::vector<double> losses;  // one per optimizer step
  std::size_t steps = 0;
};

// Runs optimizer steps until cfg.max_steps, continuing from the trainer's
// current step count. Each logged loss is the mean over its accumulation window.
FitResult fit(Trainer& trainer, std::span<const Example> examples, const TrainConfig& cfg,
              MetricsLog* log = nullptr);

}  // namespace sslalm::train
