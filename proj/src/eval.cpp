#include "sslalm/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include "sslalm/errors.hpp"

namespace sslalm::eval {

std::string normalize_text(std::string_view s) {
  std::string body;
  bool space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::ispunct(c)) continue;
    if (c < 128 && std::isspace(c)) {
      space = !body.empty();
      continue;
    }
    if (space) body.push_back(' ');
    space = false;
    body.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return "^" + body + "$";
}

std::vector<std::string> trigrams(std::string_view s) {
  const std::string n = normalize_text(s);
  std::vector<std::string> out;
  if (n.size() < 3) return out;
  for (std::size_t i = 0; i + 3 <= n.size(); ++i) out.push_back(n.substr(i, 3));
  return out;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Embedding embed_text(std::string_view s) {
  Embedding v{};
  for (const std::string& tri : trigrams(s)) v[fnv1a64(tri) % kEmbedDim] += 1.0;
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) {
    v[0] = 1.0;
    return v;
  }
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
  return v;
}

double cosine(const Embedding& a, const Embedding& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < kEmbedDim; ++i) acc += a[i] * b[i];
  return acc;
}

std::string best_label(const std::string& prediction, const std::vector<std::string>& labels) {
  if (labels.empty()) throw ContractError("classify: empty candidate set");
  const Embedding p = embed_text(prediction);
  const std::string* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const std::string& label : labels) {
    const double s = cosine(p, embed_text(label));
    if (s > best_score || (s == best_score && label < *best)) {
      best = &label;
      best_score = s;
    }
  }
  return *best;
}

SingleResult classify_single(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("classify_single: no records");
  SingleResult r;
  std::size_t correct = 0;
  for (const EvalRecord& rec : records) {
    if (rec.gold.size() != 1) {
      throw ContractError("classify_single: record '" + rec.clip_id + "' is not single-label");
    }
    r.predicted.push_back(best_label(rec.prediction, rec.labels));
    if (r.predicted.back() == rec.gold[0]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  r.micro_f1 = r.accuracy;
  return r;
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& relevant,
                         const std::vector<std::string>& ids) {
  const std::size_t n = scores.size();
  if (relevant.size() != n || ids.size() != n) {
    throw ContractError("average_precision: scores, relevance and ids differ in length");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  const auto npos = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), true));
  if (npos == 0) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (!relevant[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(npos);
}

MultiResult classify_multilabel_map(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("classify_multilabel_map: no records");
  const std::vector<std::string>& classes = records.front().labels;
  if (classes.empty()) throw ContractError("classify_multilabel_map: empty candidate set");
  std::vector<Embedding> preds;
  std::vector<std::string> ids;
  for (const EvalRecord& rec : records) {
    if (rec.labels != classes) {
      throw ContractError("classify_multilabel_map: record '" + rec.clip_id +
                          "' uses a different candidate vocabulary");
    }
    preds.push_back(embed_text(rec.prediction));
    ids.push_back(rec.clip_id);
  }
  MultiResult r;
  double total = 0.0;
  for (const std::string& c : classes) {
    const Embedding ce = embed_text(c);
    std::vector<double> scores;
    std::vector<bool> relevant;
    for (std::size_t i = 0; i < records.size(); ++i) {
      scores.push_back(cosine(preds[i], ce));
      const auto& gold = records[i].gold;
      relevant.push_back(std::find(gold.begin(), gold.end(), c) != gold.end());
    }
    const double ap = average_precision(scores, relevant, ids);
    if (std::isnan(ap)) {
      r.skipped.push_back(c);
      continue;
    }
    r.per_class[c] = ap;
    total += ap;
  }
  if (r.per_class.empty()) throw ContractError("classify_multilabel_map: no class has a positive");
  r.map = total / static_cast<double>(r.per_class.size());
  return r;
}

nlohmann::ordered_json run_eval(const std::vector<data::DatasetRecord>& dataset,
                                const Generator& generate, const std::string& task) {
  if (dataset.empty()) throw ContractError("run_eval: empty dataset");
  std::map<std::string, std::vector<EvalRecord>> by_task;
  nlohmann::ordered_json predictions = nlohmann::ordered_json::array();
  for (const data::DatasetRecord& rec : dataset) {
    const std::string t = task.empty() ? rec.task : task;
    EvalRecord e{rec.clip_id, generate(rec), rec.labels, rec.gold};
    predictions.push_back({{"clip_id", e.clip_id}, {"task", t}, {"prediction", e.prediction},
                           {"gold", e.gold}});
    by_task[t].push_back(std::move(e));
  }

  nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
  for (const auto& [t, records] : by_task) {
    if (t == "single") {
      const SingleResult r = classify_single(records);
      tasks[t] = {{"count", records.size()}, {"accuracy", r.accuracy}, {"micro_f1", r.micro_f1}};
      // Attach the matched label to each single-label prediction.
      std::size_t i = 0;
      for (auto& p : predictions) {
        if (p["task"] == "single") p["matched"] = r.predicted[i++];
      }
    } else if (t == "multi") {
      const MultiResult r = classify_multilabel_map(records);
      tasks[t] = {{"count", records.size()},
                  {"map", r.map},
                  {"per_class", r.per_class},
                  {"skipped_classes", r.skipped}};
    } else if (t == "caption") {
      tasks[t] = {{"count", records.size()}};
    } else {
      throw ContractError("run_eval: unknown task '" + t + "'");
    }
  }
  nlohmann::ordered_json report;
  report["num_clips"] = dataset.size();
  report["tasks"] = std::move(tasks);
  report["predictions"] = std::move(predictions);
  return report;
}

}  // namespace sslalm::eval
