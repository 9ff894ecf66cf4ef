#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sslalm/tensor.hpp"

namespace sslalm {

enum class Init {
  kZeros,
  kOnes,
  kNormal,   // N(0, scale²)
  kUniform,  // U(-scale, scale)
  kALog,     // row e holds log(1..N): the S4D-real diagonal
  kDtBias,   // inverse softplus of a log-uniform step in [1e-3, 1e-1]
};

// Name, shape and initializer of one parameter. Model code produces these
// lists; both parameter counting and instantiation read the same list.
struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::kZeros;
  double scale = 0.0;
};

std::size_t count_params(const std::vector<ParamSpec>& specs);

// Named parameters in creation order.
class ParamStore {
 public:
  static ParamStore create(const std::vector<ParamSpec>& specs, std::uint64_t seed);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  void add(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t total() const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace sslalm
