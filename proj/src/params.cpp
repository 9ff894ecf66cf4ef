#include "sslalm/params.hpp"

#include <cmath>
#include <random>

#include "sslalm/errors.hpp"

namespace sslalm {

std::size_t count_params(const std::vector<ParamSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += shape_numel(s.shape);
  return n;
}

ParamStore ParamStore::create(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamStore store;
  std::mt19937_64 rng(seed);
  for (const auto& spec : specs) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<double> v(n, 0.0);
    switch (spec.init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case Init::kNormal: {
        std::normal_distribution<double> dist(0.0, spec.scale);
        for (double& x : v) x = dist(rng);
        break;
      }
      case Init::kUniform: {
        std::uniform_real_distribution<double> dist(-spec.scale, spec.scale);
        for (double& x : v) x = dist(rng);
        break;
      }
      case Init::kALog: {
        const std::size_t N = spec.shape.back();
        for (std::size_t i = 0; i < n; ++i) v[i] = std::log(static_cast<double>(i % N + 1));
        break;
      }
      case Init::kDtBias: {
        std::uniform_real_distribution<double> dist(std::log(1e-3), std::log(1e-1));
        for (double& x : v) {
          const double dt = std::exp(dist(rng));
          x = dt + std::log(-std::expm1(-dt));
        }
        break;
      }
    }
    store.add(spec.name, Tensor::from(spec.shape, std::move(v), true));
  }
  return store;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("parameter '" + name + "' not found");
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("parameter '" + name + "' not found");
  return entries_[it->second].second;
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
}

std::size_t ParamStore::total() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

}  // namespace sslalm
