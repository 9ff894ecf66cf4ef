#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslalm/encoder.hpp"
#include "sslalm/language_model.hpp"

namespace sslalm::data {

// Byte-level vocabulary: ids 0-255 are bytes, then three specials.
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr std::size_t kVocabSize = 259;

// [BOS, bytes..., EOS]
std::vector<int> tokenize(std::string_view text);
// Drops special ids and reassembles the bytes.
std::string detokenize(std::span<const int> ids);

// Text layout of one example: BOS question '\n' answer EOS. The loss covers
// answer bytes and EOS (plus the question span when include_question is set).
TokenSequence build_sequence(std::string_view question, std::string_view answer,
                             std::size_t audio_prefix_len, bool include_question = false);
// BOS question '\n': what generation is primed with.
std::vector<int> prompt_ids(std::string_view question);

// Binary spectrogram file: "SPEC", u32 version, u32 T, u32 F, then T·F
// little-endian float32 values, row-major.
inline constexpr std::uint32_t kSpectrogramVersion = 1;
void write_spectrogram(const std::filesystem::path& path, const Spectrogram& s);
Spectrogram read_spectrogram(const std::filesystem::path& path);

enum class Pattern { kTone, kChirp, kPulse, kNoise };

struct SoundClass {
  std::string name;
  std::string phrase;  // what answers and labels call it
  Pattern pattern = Pattern::kTone;
  std::size_t band_lo = 0;  // frequency bins [band_lo, band_hi)
  std::size_t band_hi = 0;
  std::size_t period = 8;  // pulse / chirp period in frames
};

struct SynthSpec {
  std::vector<SoundClass> classes;
  std::size_t clips = 512;
  std::size_t T = 64;
  std::size_t F = 16;
  std::size_t min_classes = 1;
  std::size_t max_classes = 1;
  double noise = 0.1;
  double amplitude = 1.0;
  // Single-label clips cycle through the classes instead of drawing them.
  bool balanced = true;
  std::uint64_t seed = 1;
  std::string split = "train";
  // Which question template clips carry: "mixed" draws one of the two per
  // clip, "caption" or "list" fixes it.
  std::string questions = "mixed";

  // Throws ConfigError on overlapping bands, bands outside F, bad counts.
  void validate() const;
};

// Eight classes with disjoint bands of width F/8.
std::vector<SoundClass> default_classes(std::size_t F);

inline constexpr std::string_view kCaptionPrompt = "write an audio caption describing the sound";
inline constexpr std::string_view kListPrompt = "what sounds are present?";

struct SynthClip {
  std::string clip_id;
  Spectrogram spectrogram;
  std::vector<std::size_t> classes;  // ascending class indices
  std::string question;
  std::string answer;
};

// Clip `index` of the corpus; depends only on (spec, index).
SynthClip synth_clip(const SynthSpec& spec, std::size_t index);
std::vector<SynthClip> synth_generate(const SynthSpec& spec);

// Canonical answer: phrases of the planted classes in class order, " and "-joined.
std::string answer_for(const SynthSpec& spec, std::span<const std::size_t> classes);

// Band-energy detector: classes whose band mean exceeds a quarter of the amplitude.
std::vector<std::size_t> detect_classes(const SynthSpec& spec, const Spectrogram& s);

// One line of the dataset JSONL.
struct DatasetRecord {
  std::string clip_id;
  std::filesystem::path spectrogram;  // resolved against the JSONL directory
  std::string question;
  std::vector<std::string> labels;
  std::vector<std::string> gold;
  std::string task;  // "single" | "multi" | "caption"
  std::string answer;  // optional; training target
};

// Writes <dir>/<split>.jsonl and <dir>/spectrograms/<clip_id>.spec.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const SynthSpec& spec,
                                    std::span<const SynthClip> clips);
// Throws DataError naming the line on schema violations.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& jsonl);

}  // namespace sslalm::data
