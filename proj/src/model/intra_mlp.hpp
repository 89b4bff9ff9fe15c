#pragma once

#include <string>

#include "model/config.hpp"
#include "model/params.hpp"
#include "tensor/tensor.hpp"

namespace ufo {

// Cosine similarity between every pair of patches of each image:
// (B·N, C, h, w) -> (B·N, Q, Q), Q = h·w. Each patch's channel vector is
// L2-normalized first (zero vectors stay zero) and the diagonal is set to the
// most negative finite value. Not differentiable; only indices are derived from it.
template <typename T>
Tensor<T> similarity(const Tensor<T>& f4);

// Per query row, the K largest entries in descending order, ties to the lower
// index. Result shape (B·N, Q, K). Requires 1 <= K <= Q − 1.
template <typename T>
IndexTensor topk_neighbors(const Tensor<T>& sim, int k);

// Shared per-(patch, neighbor) MLP, max over neighbors, 1×1 projection and a
// sigmoid: the self-mask β of shape (B·N, 1, h, w).
template <typename T>
class IntraMlp {
 public:
  IntraMlp(const IntraMlpConfig& cfg, int channels, ParameterStore<T>& store, const std::string& prefix = "intra");

  Tensor<T> aggregate(Tape<T>& tape, const Tensor<T>& f4, const IndexTensor& neighbors) const;

  // similarity -> topk -> aggregate. `frozen` replaces the computed neighbor
  // indices; `used` receives the indices actually gathered.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& f4, const IndexTensor* frozen = nullptr,
                    IndexTensor* used = nullptr) const;

  Tensor<T> w1, b1, w1_center, w2, b2, proj_w, proj_b;

 private:
  IntraMlpConfig cfg_;
  int channels_;
};

}  // namespace ufo
