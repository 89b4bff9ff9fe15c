#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor/tensor.hpp"

namespace ufo {

enum class Init { kZeros, kOnes, kGlorot };

// Uniform [0,1) from the top 53 bits; independent of the standard library's
// distribution implementations so generated values are portable.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Ordered, named set of learnable tensors. Registration order is the
// checkpoint and optimizer order.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed = 0) : rng_(seed) {}

  // Glorot init draws uniformly from [−a, a], a = √(6/(fan_in + fan_out)).
  Tensor<T> add(const std::string& name, Shape shape, Init init, int64_t fan_in = 0, int64_t fan_out = 0) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
    Tensor<T> t(std::move(shape), T(0), true);
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        for (auto& v : t.data()) v = T(1);
        break;
      case Init::kGlorot: {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : t.data()) v = static_cast<T>((2.0 * unit_uniform(rng_) - 1.0) * a);
        break;
      }
    }
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ufo
