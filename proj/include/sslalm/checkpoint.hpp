#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sslalm/config.hpp"
#include "sslalm/model.hpp"
#include "sslalm/tensor.hpp"
#include "sslalm/training.hpp"

namespace sslalm::ckpt {

// Layout (little-endian):
//   "SSCK" | u32 version | u32 len + config JSON | u32 tensor count |
//   per tensor: u32 len + UTF-8 name, u8 dtype, u32 rank, u32 dims[rank], data
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 1;

struct File {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_file(const std::filesystem::path& path, const File& file);
// Throws DataError on bad magic, unknown version, unknown dtype or truncation.
File read_file(const std::filesystem::path& path);

// Optimizer moments are stored as "optimizer.m/<param>" and "optimizer.v/<param>".
void save(const std::filesystem::path& path, const RunConfig& cfg, const LalmModel& model,
          const train::AdamW* optimizer = nullptr);

struct Loaded {
  RunConfig config;
  std::unique_ptr<LalmModel> model;
  bool has_optimizer = false;
  std::size_t optimizer_steps = 0;
  std::map<std::string, train::AdamW::Moments> moments;

  // Copies the stored moments and step count into `opt`.
  void restore(train::AdamW& opt) const;
};

// Rebuilds the model from the embedded config and checks every expected
// tensor name and shape; errors name the offending tensor.
Loaded load(const std::filesystem::path& path);

}  // namespace sslalm::ckpt
