#pragma once

#include <string>

#include "model/config.hpp"
#include "model/params.hpp"
#include "tensor/tensor.hpp"

namespace ufo {

template <typename T>
struct SemanticOutput {
  Tensor<T> alpha;   // (B·N, embed_dim), post-relu pooled embedding
  Tensor<T> logits;  // (B·N, num_classes)
};

// 3×3 conv + relu, global average pool, then a linear classifier.
template <typename T>
class SemanticHead {
 public:
  SemanticHead(const SemanticConfig& cfg, int in_channels, ParameterStore<T>& store,
               const std::string& prefix = "semantic");

  SemanticOutput<T> forward(Tape<T>& tape, const Tensor<T>& f4) const;

  Tensor<T> conv_w, conv_b, fc_w, fc_b;

 private:
  SemanticConfig cfg_;
};

}  // namespace ufo
