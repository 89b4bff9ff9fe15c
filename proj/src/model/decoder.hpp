#pragma once

#include <array>
#include <string>

#include "model/config.hpp"
#include "model/params.hpp"
#include "tensor/tensor.hpp"

namespace ufo {

// Top-down pyramid decoder. For stage s = 4..1:
//   x = relu(conv3x3(x))
//   x = x ⊙ sigmoid(Wα_s·α + b)        (alpha_on, modulated stages)
//   x = x + bilinear_resize(β)         (beta_on, modulated stages)
//   x = upsample2(x) + conv1x1(F_{s−1}) (s > 1)
// then a 3×3 conv to one logit channel, ×2 bilinear upsample and a sigmoid.
template <typename T>
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, const std::array<int, 4>& channels, int alpha_dim, ParameterStore<T>& store,
          const std::string& prefix = "decoder");

  struct Stage {
    Tensor<T> conv_w, conv_b;
    Tensor<T> lateral_w, lateral_b;  // undefined for stage 1
    Tensor<T> alpha_w, alpha_b;      // undefined unless modulated with alpha_on
    bool modulated = false;
  };

  // features: F1, F2, F3', F4'. alpha/beta may be undefined when their toggle
  // is off; they are ignored in that case.
  Tensor<T> decode(Tape<T>& tape, const std::array<Tensor<T>, 4>& features, const Tensor<T>& alpha,
                   const Tensor<T>& beta) const;

  // One stage up to (not including) the upsample/lateral step.
  Tensor<T> stage_body(Tape<T>& tape, int stage, const Tensor<T>& x, const Tensor<T>& alpha,
                       const Tensor<T>& beta) const;

  Stage& stage(int s) { return stages_.at(static_cast<std::size_t>(s - 1)); }
  Tensor<T> final_w, final_b;

 private:
  DecoderConfig cfg_;
  std::array<int, 4> channels_;
  std::array<Stage, 4> stages_;
};

}  // namespace ufo
