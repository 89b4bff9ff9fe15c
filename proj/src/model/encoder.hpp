#pragma once

#include <array>
#include <string>

#include "model/config.hpp"
#include "model/params.hpp"
#include "tensor/tensor.hpp"

namespace ufo {

// F1..F4 at strides 2, 4, 8, 16 of the input.
template <typename T>
struct EncoderOutput {
  std::array<Tensor<T>, 4> f;
};

template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParameterStore<T>& store, const std::string& prefix = "encoder");

  // images: (B·N, in_channels, H, W) with H, W divisible by 16.
  EncoderOutput<T> encode(Tape<T>& tape, const Tensor<T>& images) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Conv {
    Tensor<T> weight, bias;
    int stride, pad;
  };
  EncoderConfig cfg_;
  std::array<std::vector<Conv>, 4> stages_;
};

// Auxiliary-stream gating: stages 3 and 4 become aux ⊙ img, stages 1 and 2
// pass through.
template <typename T>
EncoderOutput<T> fuse_auxiliary(Tape<T>& tape, const EncoderOutput<T>& img, const EncoderOutput<T>& aux);

}  // namespace ufo
