#include <functional>
#include <string>

#include "catch_amalgamated.hpp"
#include "sslalm/config.hpp"
#include "sslalm/errors.hpp"

using namespace sslalm;

namespace {

bool message_has(const std::function<void()>& f, const std::string& fragment) {
  try {
    f();
  } catch (const ConfigError& e) {
    return std::string(e.what()).find(fragment) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("sections and keys are parsed with the preset applied first") {
  const RunConfig cfg = RunConfig::parse(
      "# comment\n"
      "[train]\n"
      "lr = 0.125\n"
      "freeze_plan = encoder.*, !encoder.stem.*\n"
      "[model]\n"
      "lora_rank = 4\n"
      "preset = toy\n"
      "\n"
      "[sampler]\n"
      "temperature = 0\n");
  CHECK(cfg.preset == "toy");
  CHECK(cfg.model.lora.rank == 4);
  CHECK(cfg.train.lr == 0.125);
  CHECK(cfg.train.freeze_plan == std::vector<std::string>{"encoder.*", "!encoder.stem.*"});
  CHECK(cfg.sampler.temperature == 0.0);
}

TEST_CASE("the text form round-trips every key") {
  RunConfig cfg;
  cfg.set("model.preset", "hybrid-small");
  cfg.set("train.lr", "0.1");
  cfg.set("train.eps", "1e-8");
  cfg.set("data.noise", "0.30000000000000004");
  cfg.set("data.balanced", "false");
  cfg.set("encoder.dims", "8,16,32,64");
  cfg.set("eval.prompt", "what sounds are present?");
  cfg.set("sampler.seed", "18446744073709551615");
  const RunConfig back = RunConfig::parse(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.train.lr == 0.1);
  CHECK(back.train.eps == 1e-8);
  CHECK(back.data.noise == 0.30000000000000004);
  CHECK_FALSE(back.data.balanced);
  CHECK(back.sampler.seed == 18446744073709551615ULL);
  CHECK(back.model.lm.arch == LmArch::kLlama);

  const RunConfig via_json = RunConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(via_json.to_text() == cfg.to_text());

  std::size_t lines = 0;
  const std::string text = cfg.to_text();
  for (char c : text) lines += c == '=';
  CHECK(lines == RunConfig::keys().size());
}

TEST_CASE("unknown keys and sections are rejected with their location") {
  CHECK(message_has([] { RunConfig::parse("[train]\nlearning_rate = 1\n", "a.ini"); },
                    "a.ini:2: unknown key 'train.learning_rate'"));
  CHECK(message_has([] { RunConfig::parse("[optim]\nlr = 1\n", "b.ini"); }, "b.ini:1: unknown section"));
  CHECK(message_has([] { RunConfig::parse("lr = 1\n", "c.ini"); }, "outside any section"));
  CHECK(message_has([] { RunConfig::parse("[train]\nlr\n", "d.ini"); }, "expected key = value"));
  CHECK(message_has([] { RunConfig::parse("[train\n", "e.ini"); }, "malformed section"));
  CHECK(message_has([] { RunConfig::parse("[train]\nbatch_size = many\n", "f.ini"); }, "f.ini:2"));
  CHECK(message_has([] { RunConfig::parse("[model]\npreset = gigantic\n"); }, "gigantic"));
}

TEST_CASE("overrides use section.key=value") {
  RunConfig cfg;
  cfg.apply_override("train.max_steps=7");
  cfg.apply_override("sampler.top_p = 0.5");
  CHECK(cfg.train.max_steps == 7);
  CHECK(cfg.sampler.top_p == 0.5);
  CHECK_THROWS_AS(cfg.apply_override("train.max_steps"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("train.nothing=1"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("train.max_steps=-1"), ConfigError);
}

TEST_CASE("shipped config files load and validate") {
  for (const char* name : {"toy", "overfit", "sslalm-small", "sslalm-medium", "hybrid-small", "hybrid-medium"}) {
    INFO(name);
    const RunConfig cfg = RunConfig::load(std::string(SSLALM_CONFIG_DIR) + "/" + name + ".ini");
    CHECK_NOTHROW(cfg.validate());
  }
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/x.ini"), ConfigError);
}

TEST_CASE("data config produces distinct train and eval corpora") {
  DataConfig d;
  const auto train = d.synth("train"), eval = d.synth("eval");
  CHECK(train.clips == 512);
  CHECK(eval.clips == 128);
  CHECK(train.seed != eval.seed);
  CHECK(eval.split == "eval");
  d.num_classes = 9;
  CHECK_THROWS_AS(d.synth("train"), ConfigError);
}
