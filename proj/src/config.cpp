#include "sslalm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sslalm/errors.hpp"

namespace sslalm {

data::SynthSpec DataConfig::synth(const std::string& split) const {
  data::SynthSpec s;
  auto classes = data::default_classes(F);
  if (num_classes == 0 || num_classes > classes.size()) {
    throw ConfigError("data: num_classes must lie in [1, " + std::to_string(classes.size()) + "]");
  }
  classes.resize(num_classes);
  s.classes = std::move(classes);
  s.clips = split == "eval" ? eval_clips : train_clips;
  s.T = T;
  s.F = F;
  s.min_classes = min_classes;
  s.max_classes = max_classes;
  s.noise = noise;
  s.balanced = balanced;
  s.seed = split == "eval" ? seed ^ 0x9e3779b97f4a7c15ULL : seed;
  s.split = split;
  s.questions = questions;
  return s;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + want);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (used != v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> to_array(const std::string& key, const std::string& v) {
  const auto items = to_list(v);
  if (items.size() != N) bad_value(key, v, "a list of 4 integers");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_size(key, items[i]);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}
template <std::size_t N>
std::string join(const std::array<std::size_t, N>& items) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(items[i]);
  return out;
}

struct Key {
  std::string name;  // section.key
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SSLALM_SIZE(sec, key, field)                                                    \
  Key {                                                                                 \
    sec "." key, [](RunConfig& c, const std::string& v) { c.field = to_size(sec "." key, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.field)); }      \
  }
#define SSLALM_DOUBLE(sec, key, field)                                                    \
  Key {                                                                                   \
    sec "." key, [](RunConfig& c, const std::string& v) { c.field = to_double(sec "." key, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                  \
  }
#define SSLALM_BOOL(sec, key, field)                                                    \
  Key {                                                                                 \
    sec "." key, [](RunConfig& c, const std::string& v) { c.field = to_bool(sec "." key, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                \
  }
#define SSLALM_U64(sec, key, field)                                                    \
  Key {                                                                                \
    sec "." key, [](RunConfig& c, const std::string& v) { c.field = to_u64(sec "." key, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); } \
  }
#define SSLALM_STRING(sec, key, field)                                    \
  Key {                                                                   \
    sec "." key, [](RunConfig& c, const std::string& v) { c.field = v; }, \
        [](const RunConfig& c) { return c.field; }                        \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      Key{"model.preset",
          [](RunConfig& c, const std::string& v) {
            c.model = preset(v);
            c.preset = v;
          },
          [](const RunConfig& c) { return c.preset; }},
      SSLALM_U64("model", "seed", model_seed),
      Key{"model.lm_arch",
          [](RunConfig& c, const std::string& v) {
            if (v == "mamba") c.model.lm.arch = LmArch::kMamba;
            else if (v == "llama") c.model.lm.arch = LmArch::kLlama;
            else bad_value("model.lm_arch", v, "mamba or llama");
          },
          [](const RunConfig& c) {
            return std::string(c.model.lm.arch == LmArch::kMamba ? "mamba" : "llama");
          }},
      SSLALM_SIZE("model", "vocab_size", model.lm.vocab_size),
      SSLALM_SIZE("model", "d_model", model.lm.d_model),
      SSLALM_SIZE("model", "n_layers", model.lm.n_layers),
      SSLALM_SIZE("model", "max_seq", model.lm.max_seq),
      SSLALM_SIZE("model", "d_state", model.lm.d_state),
      SSLALM_SIZE("model", "expand", model.lm.expand),
      SSLALM_SIZE("model", "d_conv", model.lm.d_conv),
      SSLALM_SIZE("model", "dt_rank", model.lm.dt_rank),
      SSLALM_SIZE("model", "ffn_dim", model.lm.ffn_dim),
      SSLALM_BOOL("model", "audio_prefix", model.lm.audio_prefix),
      SSLALM_DOUBLE("model", "embed_std", model.lm.embed_std),
      SSLALM_SIZE("model", "lora_rank", model.lora.rank),
      SSLALM_DOUBLE("model", "lora_alpha", model.lora.alpha),
      SSLALM_STRING("model", "lora_targets", model.lora.targets),
      SSLALM_SIZE("model", "input_T", model.input_T),
      SSLALM_SIZE("model", "input_F", model.input_F),
      SSLALM_BOOL("model", "include_question_loss", model.include_question_loss),

      SSLALM_SIZE("encoder", "stem_patch", model.encoder.stem_patch),
      Key{"encoder.dims",
          [](RunConfig& c, const std::string& v) { c.model.encoder.dims = to_array<4>("encoder.dims", v); },
          [](const RunConfig& c) { return join(c.model.encoder.dims); }},
      Key{"encoder.depths",
          [](RunConfig& c, const std::string& v) {
            c.model.encoder.depths = to_array<4>("encoder.depths", v);
          },
          [](const RunConfig& c) { return join(c.model.encoder.depths); }},
      SSLALM_SIZE("encoder", "downsample", model.encoder.downsample),
      SSLALM_SIZE("encoder", "d_state", model.encoder.d_state),
      SSLALM_SIZE("encoder", "expand", model.encoder.expand),
      SSLALM_SIZE("encoder", "d_conv", model.encoder.d_conv),
      SSLALM_SIZE("encoder", "bridge_out_dim", model.encoder.bridge_out_dim),

      SSLALM_DOUBLE("train", "lr", train.lr),
      SSLALM_DOUBLE("train", "beta1", train.beta1),
      SSLALM_DOUBLE("train", "beta2", train.beta2),
      SSLALM_DOUBLE("train", "weight_decay", train.weight_decay),
      SSLALM_DOUBLE("train", "eps", train.eps),
      SSLALM_SIZE("train", "batch_size", train.batch_size),
      SSLALM_SIZE("train", "accum_steps", train.accum_steps),
      SSLALM_SIZE("train", "max_steps", train.max_steps),
      SSLALM_U64("train", "seed", train.seed),
      Key{"train.freeze_plan",
          [](RunConfig& c, const std::string& v) { c.train.freeze_plan = to_list(v); },
          [](const RunConfig& c) { return join(c.train.freeze_plan); }},

      SSLALM_DOUBLE("sampler", "temperature", sampler.temperature),
      SSLALM_SIZE("sampler", "top_k", sampler.top_k),
      SSLALM_DOUBLE("sampler", "top_p", sampler.top_p),
      SSLALM_DOUBLE("sampler", "repetition_penalty", sampler.repetition_penalty),
      SSLALM_SIZE("sampler", "max_new_tokens", sampler.max_new_tokens),
      SSLALM_U64("sampler", "seed", sampler.seed),
      SSLALM_BOOL("sampler", "penalize_prompt", sampler.penalize_prompt),

      SSLALM_SIZE("data", "num_classes", data.num_classes),
      SSLALM_SIZE("data", "train_clips", data.train_clips),
      SSLALM_SIZE("data", "eval_clips", data.eval_clips),
      SSLALM_SIZE("data", "T", data.T),
      SSLALM_SIZE("data", "F", data.F),
      SSLALM_SIZE("data", "min_classes", data.min_classes),
      SSLALM_SIZE("data", "max_classes", data.max_classes),
      SSLALM_DOUBLE("data", "noise", data.noise),
      SSLALM_BOOL("data", "balanced", data.balanced),
      SSLALM_U64("data", "seed", data.seed),
      SSLALM_STRING("data", "questions", data.questions),

      SSLALM_STRING("eval", "prompt", eval.prompt),
      SSLALM_STRING("eval", "task", eval.task),
      SSLALM_SIZE("eval", "max_clips", eval.max_clips),
  };
  return table;
}

#undef SSLALM_SIZE
#undef SSLALM_DOUBLE
#undef SSLALM_BOOL
#undef SSLALM_U64
#undef SSLALM_STRING

const Key* find_key(const std::string& name) {
  for (const Key& k : key_table()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.push_back(k.name);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("config: unknown key '" + key + "'");
  k->set(*this, value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override '" + assignment + "' is not section.key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::parse(std::string_view text, const std::string& source) {
  struct Entry {
    std::string key, value;
    std::size_t line;
  };
  std::vector<Entry> entries;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      static const char* known[] = {"model", "encoder", "train", "sampler", "data", "eval"};
      bool ok = false;
      for (const char* k : known) ok = ok || section == k;
      if (!ok) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside any section");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    if (!find_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    entries.push_back({key, trim(std::string_view(line).substr(eq + 1)), lineno});
  }

  RunConfig cfg;
  for (const Entry& e : entries) {
    if (e.key == "model.preset") cfg.set(e.key, e.value);
  }
  for (const Entry& e : entries) {
    if (e.key == "model.preset") continue;
    try {
      cfg.set(e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(source + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  sampler.validate();
  data.synth("train").validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  std::string section;
  for (const Key& k : key_table()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(*this) + "\n";
  }
  return out;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const Key& k : key_table()) {
    const auto dot = k.name.find('.');
    j[k.name.substr(0, dot)][k.name.substr(dot + 1)] = k.get(*this);
  }
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: JSON config must be an object");
  RunConfig cfg;
  if (j.contains("model") && j["model"].contains("preset")) {
    cfg.set("model.preset", j["model"]["preset"].get<std::string>());
  }
  for (const auto& [sec, body] : j.items()) {
    if (!body.is_object()) throw ConfigError("config: section '" + sec + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      const std::string name = sec + "." + key;
      if (name == "model.preset") continue;
      if (!value.is_string()) throw ConfigError("config: value of '" + name + "' must be a string");
      cfg.set(name, value.get<std::string>());
    }
  }
  return cfg;
}

}  // namespace sslalm
