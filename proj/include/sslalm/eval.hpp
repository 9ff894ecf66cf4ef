#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sslalm/data.hpp"

namespace sslalm::eval {

inline constexpr std::size_t kEmbedDim = 512;
using Embedding = std::array<double, kEmbedDim>;

// Lowercase, drop ASCII punctuation, collapse whitespace runs to one space,
// trim, then wrap in '^' ... '$'.
std::string normalize_text(std::string_view s);
// Character trigrams of normalize_text(s), in order, duplicates kept. Empty
// text yields none.
std::vector<std::string> trigrams(std::string_view s);
std::uint64_t fnv1a64(std::string_view s);
// Hashed trigram counts, L2-normalized. Text with no trigrams maps to e_0.
Embedding embed_text(std::string_view s);
double cosine(const Embedding& a, const Embedding& b);

struct EvalRecord {
  std::string clip_id;
  std::string prediction;
  std::vector<std::string> labels;
  std::vector<std::string> gold;
};

// Candidate with the highest cosine; ties go to the lexicographically smallest.
std::string best_label(const std::string& prediction, const std::vector<std::string>& labels);

struct SingleResult {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  std::vector<std::string> predicted;  // per record, input order
};
SingleResult classify_single(const std::vector<EvalRecord>& records);

// AP of one class from scores and binary relevance. Ties in score are broken
// by `ids` ascending. Returns NaN when there are no positives.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& relevant,
                         const std::vector<std::string>& ids);

struct MultiResult {
  double map = 0.0;
  std::map<std::string, double> per_class;  // classes with >= 1 positive
  std::vector<std::string> skipped;         // classes with no positives
};
MultiResult classify_multilabel_map(const std::vector<EvalRecord>& records);

// Produces the model's text for one dataset record.
using Generator = std::function<std::string(const data::DatasetRecord&)>;

// Generates every prediction, then scores per task. Returns a JSON report with
// per-task metrics and per-clip predictions. `task` = "" uses each record's own.
nlohmann::ordered_json run_eval(const std::vector<data::DatasetRecord>& dataset,
                                const Generator& generate, const std::string& task = "");

}  // namespace sslalm::eval
