#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tensor/tensor.hpp"

namespace ufo {

template <typename T>
struct AdamState {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One Adam update over `params` using their accumulated grads (a parameter
// without a grad is treated as having a zero gradient). Moments are created on
// the first call; t is incremented before bias correction and the update is
// p ← p − lr·m̂/(√v̂ + eps).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace ufo
