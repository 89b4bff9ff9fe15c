#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "model/config.hpp"
#include "model/decoder.hpp"
#include "model/encoder.hpp"
#include "model/group_transformer.hpp"
#include "model/intra_mlp.hpp"
#include "model/params.hpp"
#include "model/semantic_head.hpp"

namespace ufo {

template <typename T>
struct NetworkOutput {
  Tensor<T> probs;   // (B·N, 1, H, W)
  Tensor<T> logits;  // (B·N, num_classes)
  Tensor<T> alpha;   // (B·N, embed_dim)
  Tensor<T> beta;    // (B·N, 1, h4, w4); undefined when beta_on is false
  IndexTensor neighbors;
  std::array<Tensor<T>, 4> features;  // F1, F2, F3', F4'
};

// encode -> (aux gating) -> group attention on F3/F4 -> intra-MLP self-mask on
// encoder F4 -> semantic head on F4' -> modulated decoder.
template <typename T>
class UfoNet {
 public:
  explicit UfoNet(const ModelConfig& cfg);
  UfoNet(const UfoNet&) = delete;
  UfoNet& operator=(const UfoNet&) = delete;

  NetworkOutput<T> forward(Tape<T>& tape, const Tensor<T>& images, int64_t group_size, const Tensor<T>* aux = nullptr,
                           const IndexTensor* frozen_neighbors = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }

  // Parameters of the co-category classifier layer.
  std::vector<std::string> classifier_parameter_names() const;

  Encoder<T>& encoder() { return encoder_; }
  GroupTransformer<T>* transformer() { return transformer_ ? &*transformer_ : nullptr; }
  IntraMlp<T>* intra() { return intra_ ? &*intra_ : nullptr; }
  SemanticHead<T>& semantic() { return *semantic_; }
  Decoder<T>& decoder() { return *decoder_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> store_;
  Encoder<T> encoder_;
  std::optional<GroupTransformer<T>> transformer_;
  std::optional<IntraMlp<T>> intra_;
  std::optional<SemanticHead<T>> semantic_;
  std::optional<Decoder<T>> decoder_;
};

}  // namespace ufo
