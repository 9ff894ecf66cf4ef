#include "sslalm/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "sslalm/errors.hpp"

namespace sslalm::data {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBos);
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  ids.push_back(kEos);
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

std::vector<int> prompt_ids(std::string_view question) {
  std::vector<int> ids = tokenize(question);
  ids.back() = '\n';
  return ids;
}

TokenSequence build_sequence(std::string_view question, std::string_view answer,
                             std::size_t audio_prefix_len, bool include_question) {
  TokenSequence seq;
  seq.audio_prefix_len = audio_prefix_len;
  seq.ids = prompt_ids(question);
  seq.loss_mask.assign(seq.ids.size(), include_question);
  seq.loss_mask[0] = false;
  for (char c : answer) {
    seq.ids.push_back(static_cast<unsigned char>(c));
    seq.loss_mask.push_back(true);
  }
  seq.ids.push_back(kEos);
  seq.loss_mask.push_back(true);
  return seq;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(what + ": truncated file");
  return v;
}

std::mt19937_64 clip_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double band_mean(const Spectrogram& s, const SoundClass& c) {
  double acc = 0.0;
  for (std::size_t t = 0; t < s.T; ++t) {
    for (std::size_t f = c.band_lo; f < c.band_hi; ++f) acc += s.frames[t * s.F + f];
  }
  return acc / static_cast<double>(s.T * (c.band_hi - c.band_lo));
}

void paint(Spectrogram& s, const SoundClass& c, double amp, std::mt19937_64& rng) {
  const std::size_t width = c.band_hi - c.band_lo;
  const std::size_t period = std::max<std::size_t>(c.period, 1);
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  for (std::size_t t = 0; t < s.T; ++t) {
    for (std::size_t f = c.band_lo; f < c.band_hi; ++f) {
      double v = 0.0;
      switch (c.pattern) {
        case Pattern::kTone:
          v = amp;
          break;
        case Pattern::kChirp:
          v = (f - c.band_lo == (t / period) % width) ? amp : 0.0;
          break;
        case Pattern::kPulse:
          v = (t % period) < (period + 1) / 2 ? amp : 0.0;
          break;
        case Pattern::kNoise:
          v = amp * jitter(rng);
          break;
      }
      s.frames[t * s.F + f] += v;
    }
  }
}

}  // namespace

void write_spectrogram(const std::filesystem::path& path, const Spectrogram& s) {
  if (s.frames.size() != s.T * s.F) {
    throw ContractError("write_spectrogram: frame buffer does not match " + std::to_string(s.T) +
                        "x" + std::to_string(s.F));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write spectrogram " + path.string());
  os.write("SPEC", 4);
  put<std::uint32_t>(os, kSpectrogramVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.T));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.F));
  for (double v : s.frames) put<float>(os, static_cast<float>(v));
}

Spectrogram read_spectrogram(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string what = "spectrogram " + path.string();
  if (!is) throw DataError(what + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4)) throw DataError(what + ": truncated file");
  if (std::memcmp(magic, "SPEC", 4) != 0) throw DataError(what + ": bad magic");
  const auto version = get<std::uint32_t>(is, what);
  if (version != kSpectrogramVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(version));
  }
  Spectrogram s;
  s.T = get<std::uint32_t>(is, what);
  s.F = get<std::uint32_t>(is, what);
  s.frames.resize(s.T * s.F);
  for (double& v : s.frames) v = get<float>(is, what);
  return s;
}

void SynthSpec::validate() const {
  if (classes.empty()) throw ConfigError("synth: no classes");
  if (questions != "mixed" && questions != "caption" && questions != "list") {
    throw ConfigError("synth: questions must be mixed, caption or list, got '" + questions + "'");
  }
  if (T == 0 || F == 0) throw ConfigError("synth: T and F must be positive");
  if (min_classes == 0 || min_classes > max_classes || max_classes > 3 ||
      max_classes > classes.size()) {
    throw ConfigError("synth: classes per clip must satisfy 1 <= min <= max <= min(3, classes)");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const SoundClass& a = classes[i];
    if (a.band_lo >= a.band_hi || a.band_hi > F) {
      throw ConfigError("synth: class '" + a.name + "' band outside [0, F)");
    }
    for (std::size_t j = 0; j < i; ++j) {
      const SoundClass& b = classes[j];
      if (a.band_lo < b.band_hi && b.band_lo < a.band_hi) {
        throw ConfigError("synth: classes '" + b.name + "' and '" + a.name + "' have overlapping bands");
      }
      if (a.phrase == b.phrase) throw ConfigError("synth: duplicate phrase '" + a.phrase + "'");
    }
  }
}

std::vector<SoundClass> default_classes(std::size_t F) {
  if (F < 8) throw ConfigError("synth: default classes need F >= 8");
  struct Proto {
    const char* name;
    const char* phrase;
    Pattern pattern;
    std::size_t period;
  };
  static const Proto protos[] = {
      {"tone_low", "low hum", Pattern::kTone, 8},
      {"pulse_low", "slow knocking", Pattern::kPulse, 16},
      {"chirp_mid", "rising chirp", Pattern::kChirp, 8},
      {"noise_mid", "rushing water", Pattern::kNoise, 8},
      {"tone_high", "high whistle", Pattern::kTone, 8},
      {"pulse_high", "fast clicking", Pattern::kPulse, 4},
      {"chirp_high", "bird song", Pattern::kChirp, 4},
      {"noise_high", "hissing steam", Pattern::kNoise, 8},
  };
  const std::size_t w = F / 8;
  std::vector<SoundClass> out;
  for (std::size_t i = 0; i < 8; ++i) {
    out.push_back({protos[i].name, protos[i].phrase, protos[i].pattern, i * w, (i + 1) * w,
                   protos[i].period});
  }
  return out;
}

std::string answer_for(const SynthSpec& spec, std::span<const std::size_t> classes) {
  std::vector<std::size_t> sorted(classes.begin(), classes.end());
  std::sort(sorted.begin(), sorted.end());
  std::string out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0) out += " and ";
    out += spec.classes.at(sorted[i]).phrase;
  }
  return out;
}

SynthClip synth_clip(const SynthSpec& spec, std::size_t index) {
  auto rng = clip_rng(spec.seed, index);
  const std::size_t n = spec.classes.size();

  SynthClip clip;
  clip.clip_id = spec.split + "_" + std::to_string(index);
  if (spec.balanced && spec.max_classes == 1) {
    clip.classes = {index % n};
  } else {
    std::uniform_int_distribution<std::size_t> count(spec.min_classes, spec.max_classes);
    const std::size_t k = count(rng);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    clip.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(clip.classes.begin(), clip.classes.end());
  }

  Spectrogram& s = clip.spectrogram;
  s.T = spec.T;
  s.F = spec.F;
  s.frames.assign(spec.T * spec.F, 0.0);
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (double& v : s.frames) v = noise(rng);
  for (std::size_t c : clip.classes) paint(s, spec.classes[c], spec.amplitude, rng);
  // Stored as float32 on disk; round here so in-memory and on-disk clips agree.
  for (double& v : s.frames) v = static_cast<float>(v);

  const bool caption = std::bernoulli_distribution(0.5)(rng);
  if (spec.questions == "caption" || (spec.questions == "mixed" && caption)) {
    clip.question = std::string(kCaptionPrompt);
  } else {
    clip.question = std::string(kListPrompt);
  }
  clip.answer = answer_for(spec, clip.classes);
  return clip;
}

std::vector<SynthClip> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<SynthClip> clips(spec.clips);
#pragma omp parallel for schedule(static) if (spec.clips >= 64)
  for (std::size_t i = 0; i < spec.clips; ++i) clips[i] = synth_clip(spec, i);
  return clips;
}

std::vector<std::size_t> detect_classes(const SynthSpec& spec, const Spectrogram& s) {
  std::vector<std::size_t> found;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    if (band_mean(s, spec.classes[c]) > 0.25 * spec.amplitude) found.push_back(c);
  }
  return found;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const SynthSpec& spec,
                                    std::span<const SynthClip> clips) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "spectrograms");
  const fs::path jsonl = dir / (spec.split + ".jsonl");
  std::ofstream os(jsonl, std::ios::binary);
  if (!os) throw DataError("cannot write " + jsonl.string());
  std::vector<std::string> labels;
  for (const auto& c : spec.classes) labels.push_back(c.phrase);
  for (const SynthClip& clip : clips) {
    const std::string rel = "spectrograms/" + clip.clip_id + ".spec";
    write_spectrogram(dir / rel, clip.spectrogram);
    std::vector<std::string> gold;
    for (std::size_t c : clip.classes) gold.push_back(spec.classes[c].phrase);
    nlohmann::ordered_json j;
    j["clip_id"] = clip.clip_id;
    j["spectrogram"] = rel;
    j["question"] = clip.question;
    j["labels"] = labels;
    j["gold"] = gold;
    j["task"] = spec.max_classes == 1 ? "single" : "multi";
    j["answer"] = clip.answer;
    os << j.dump() << '\n';
  }
  return jsonl;
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& jsonl) {
  std::ifstream is(jsonl);
  if (!is) throw DataError("cannot open dataset " + jsonl.string());
  const auto base = jsonl.parent_path();
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = jsonl.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      DatasetRecord r;
      r.clip_id = j.at("clip_id").get<std::string>();
      r.spectrogram = base / j.at("spectrogram").get<std::string>();
      r.question = j.at("question").get<std::string>();
      r.labels = j.at("labels").get<std::vector<std::string>>();
      r.gold = j.at("gold").get<std::vector<std::string>>();
      r.task = j.at("task").get<std::string>();
      if (j.contains("answer")) r.answer = j.at("answer").get<std::string>();
      if (r.task != "single" && r.task != "multi" && r.task != "caption") {
        throw DataError(where + ": unknown task '" + r.task + "'");
      }
      if (r.task != "caption") {
        if (r.labels.empty()) throw DataError(where + ": empty label set");
        for (const auto& g : r.gold) {
          if (std::find(r.labels.begin(), r.labels.end(), g) == r.labels.end()) {
            throw DataError(where + ": gold label '" + g + "' is not a candidate");
          }
        }
        if (r.task == "single" && r.gold.size() != 1) {
          throw DataError(where + ": single-label record needs exactly one gold label");
        }
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sslalm::data
