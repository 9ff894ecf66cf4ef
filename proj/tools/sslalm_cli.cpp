// Command-line entry point: synth, train, eval, generate, count-params, shapes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sslalm/checkpoint.hpp"
#include "sslalm/config.hpp"
#include "sslalm/data.hpp"
#include "sslalm/errors.hpp"
#include "sslalm/eval.hpp"
#include "sslalm/generation.hpp"
#include "sslalm/kernels.hpp"
#include "sslalm/training.hpp"

namespace fs = std::filesystem;
using namespace sslalm;

namespace {

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  for (const auto& o : overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.ini");
  if (!os) throw DataError("cannot write " + (dir / "config.ini").string());
  os << cfg.to_text();
}

std::string with_commas(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::vector<train::Example> load_examples(const fs::path& jsonl) {
  std::vector<train::Example> out;
  for (const auto& rec : data::read_dataset(jsonl)) {
    if (rec.answer.empty()) {
      throw DataError(jsonl.string() + ": record '" + rec.clip_id + "' has no answer to train on");
    }
    out.push_back({rec.clip_id, data::read_spectrogram(rec.spectrogram), rec.question, rec.answer});
  }
  if (out.empty()) throw DataError(jsonl.string() + ": no training records");
  return out;
}

int cmd_synth(const std::string& spec, const std::string& out, const std::vector<std::string>& sets) {
  const RunConfig cfg = resolve(spec, sets);
  for (const char* split : {"train", "eval"}) {
    const data::SynthSpec s = cfg.data.synth(split);
    const auto clips = data::synth_generate(s);
    const fs::path path = data::write_dataset(out, s, clips);
    std::cout << path.string() << ": " << clips.size() << " clips\n";
  }
  echo_config(out, cfg);
  return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out,
              const std::string& resume, const std::vector<std::string>& sets) {
  std::unique_ptr<LalmModel> model;
  std::optional<ckpt::Loaded> loaded;
  RunConfig cfg;
  if (!resume.empty()) {
    loaded = ckpt::load(resume);
    cfg = loaded->config;
    for (const auto& o : sets) cfg.apply_override(o);
    cfg.validate();
    model = std::move(loaded->model);
  } else {
    cfg = resolve(config, sets);
    model = std::make_unique<LalmModel>(cfg.model, cfg.model_seed);
  }
  fs::path jsonl = data_dir;
  if (fs::is_directory(jsonl)) jsonl /= "train.jsonl";
  const auto examples = load_examples(jsonl);

  echo_config(out, cfg);
  train::Trainer trainer(*model, cfg.train);
  if (loaded) loaded->restore(trainer.optimizer());
  train::MetricsLog log(fs::path(out) / "metrics.tsv", loaded.has_value());
  const auto counts = train::count_trainable(cfg.model, cfg.train.freeze_plan);
  std::cerr << "trainable parameters: " << with_commas(counts.total) << "\n";
  const auto result = train::fit(trainer, examples, cfg.train, &log);
  ckpt::save(fs::path(out) / "checkpoint.ssck", cfg, *model, &trainer.optimizer());
  if (!result.losses.empty()) {
    std::printf("step %zu loss %.6f\n", result.steps, result.losses.back());
  } else {
    std::printf("step %zu (no updates)\n", result.steps);
  }
  return 0;
}

std::string predict(const LalmModel& model, const Spectrogram& spec, const std::string& prompt,
                    const gen::SamplerConfig& sampler) {
  const Tensor audio = model.audio_tokens(spec);
  return gen::generate(model, audio, data::prompt_ids(prompt), sampler).text;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& task,
             const std::string& out, const std::vector<std::string>& sets) {
  auto loaded = ckpt::load(checkpoint);
  for (const auto& o : sets) loaded.config.apply_override(o);
  const RunConfig& cfg = loaded.config;
  auto records = data::read_dataset(data_path);
  if (cfg.eval.max_clips > 0 && records.size() > cfg.eval.max_clips) {
    records.resize(cfg.eval.max_clips);
  }
  const LalmModel& model = *loaded.model;
  const auto report = eval::run_eval(
      records,
      [&](const data::DatasetRecord& rec) {
        return predict(model, data::read_spectrogram(rec.spectrogram), cfg.eval.prompt, cfg.sampler);
      },
      task.empty() ? cfg.eval.task : task);
  const std::string text = report.dump(2, ' ', false, nlohmann::json::error_handler_t::replace);
  if (out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream os(out);
    if (!os) throw DataError("cannot write report " + out);
    os << text << "\n";
    std::cout << report["tasks"].dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  }
  return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& spectrogram,
                 const std::string& prompt, const gen::SamplerConfig& sampler) {
  const auto loaded = ckpt::load(checkpoint);
  std::cout << predict(*loaded.model, data::read_spectrogram(spectrogram), prompt, sampler) << "\n";
  return 0;
}

int cmd_count_params(const std::string& config, const std::vector<std::string>& sets) {
  const RunConfig cfg = resolve(config, sets);
  const auto specs = model_param_specs(cfg.model);
  std::size_t all = count_params(specs);
  const auto c = train::count_trainable(specs, cfg.train.freeze_plan);
  std::printf("%-22s %16s\n", "group", "trainable");
  std::printf("%-22s %16s\n", "encoder", with_commas(c.encoder).c_str());
  std::printf("%-22s %16s\n", "bridge", with_commas(c.bridge).c_str());
  std::printf("%-22s %16s\n", "lora", with_commas(c.lora).c_str());
  std::printf("%-22s %16s\n", "lm", with_commas(c.lm).c_str());
  std::printf("%-22s %16s\n", "total trainable", with_commas(c.total).c_str());
  std::printf("%-22s %16s\n", "total parameters", with_commas(all).c_str());
  return 0;
}

int cmd_shapes(const std::string& config, const std::vector<std::string>& sets) {
  const RunConfig cfg = resolve(config, sets);
  const auto r = shape_calculator(cfg.model.encoder, cfg.model.input_T, cfg.model.input_F);
  std::printf("input %zux%zu\n", cfg.model.input_T, cfg.model.input_F);
  for (const auto& s : r.stages) std::printf("%-8s %zux%zux%zu\n", s.stage.c_str(), s.H, s.W, s.D);
  std::printf("%zu audio tokens of width %zu\n", r.audio_tokens, r.token_dim);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-conditioned state-space language model toolkit"};
  app.require_subcommand(1);
  std::vector<std::string> sets;
  std::string config, out, data_dir, resume, checkpoint, task, spectrogram;
  std::string prompt{data::kCaptionPrompt};
  gen::SamplerConfig sampler;

  auto add_sets = [&](CLI::App* sub) {
    sub->add_option("--set", sets, "Override a config key: section.key=value")->take_all();
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  synth->add_option("--spec,--config", config, "Config file ([data] section)");
  synth->add_option("--out", out, "Output directory")->required();
  add_sets(synth);

  auto* train_cmd = app.add_subcommand("train", "Finetune encoder, bridge and adapters");
  train_cmd->add_option("--config", config, "Config file");
  train_cmd->add_option("--data", data_dir, "Dataset directory or train JSONL")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  add_sets(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset JSONL")->required();
  eval_cmd->add_option("--task", task, "single, multi or caption")
      ->check(CLI::IsMember({"single", "multi", "caption"}));
  eval_cmd->add_option("--out", out, "Write the report here instead of stdout");
  add_sets(eval_cmd);

  auto* gen_cmd = app.add_subcommand("generate", "Decode text for one spectrogram");
  gen_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--spectrogram", spectrogram, "Spectrogram file")->required();
  gen_cmd->add_option("--prompt", prompt, "Question text");
  gen_cmd->add_option("--temperature", sampler.temperature)->capture_default_str();
  gen_cmd->add_option("--top-k", sampler.top_k)->capture_default_str();
  gen_cmd->add_option("--top-p", sampler.top_p)->capture_default_str();
  gen_cmd->add_option("--repetition-penalty", sampler.repetition_penalty)->capture_default_str();
  gen_cmd->add_option("--max-new-tokens", sampler.max_new_tokens)->capture_default_str();
  gen_cmd->add_option("--seed", sampler.seed)->capture_default_str();
  gen_cmd->add_flag("--penalize-prompt", sampler.penalize_prompt);

  auto* count_cmd = app.add_subcommand("count-params", "Parameter counts per group");
  count_cmd->add_option("--config", config, "Config file");
  add_sets(count_cmd);

  auto* shapes_cmd = app.add_subcommand("shapes", "Encoder stage shapes");
  shapes_cmd->add_option("--config", config, "Config file");
  add_sets(shapes_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    kernels::configure_threads();
    if (*synth) return cmd_synth(config, out, sets);
    if (*train_cmd) return cmd_train(config, data_dir, out, resume, sets);
    if (*eval_cmd) return cmd_eval(checkpoint, data_dir, task, out, sets);
    if (*gen_cmd) return cmd_generate(checkpoint, spectrogram, prompt, sampler);
    if (*count_cmd) return cmd_count_params(config, sets);
    if (*shapes_cmd) return cmd_shapes(config, sets);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
