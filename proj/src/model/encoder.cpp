#include "model/encoder.hpp"

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, ParameterStore<T>& store, const std::string& prefix) : cfg_(cfg) {
  if (cfg.in_channels < 1) throw ConfigError("encoder.in_channels must be >= 1");
  if (cfg.convs_per_stage < 1) throw ConfigError("encoder.convs_per_stage must be >= 1");
  int in = cfg.in_channels;
  for (int s = 0; s < 4; ++s) {
    const int c = cfg.stage_channels[s];
    if (c < 1) throw ConfigError("encoder.stage_channels must all be >= 1");
    for (int j = 0; j < cfg.convs_per_stage; ++j) {
      const int k = j == 0 ? 4 : 3;
      const std::string name = prefix + ".s" + std::to_string(s + 1) + ".conv" + std::to_string(j);
      Conv conv;
      conv.weight = store.add(name + ".weight", {c, in, k, k}, Init::kGlorot, int64_t{in} * k * k, int64_t{c} * k * k);
      conv.bias = store.add(name + ".bias", {c}, Init::kZeros);
      conv.stride = j == 0 ? 2 : 1;
      conv.pad = 1;
      stages_[s].push_back(conv);
      in = c;
    }
  }
}

template <typename T>
EncoderOutput<T> Encoder<T>::encode(Tape<T>& tape, const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("encoder expects (B*N," + std::to_string(cfg_.in_channels) + ",H,W), got " +
                     shape_str(images.shape()));
  }
  if (images.dim(2) % 16 != 0 || images.dim(3) % 16 != 0) {
    throw ConfigError("input H and W must be divisible by 16, got " + std::to_string(images.dim(2)) + "x" +
                      std::to_string(images.dim(3)));
  }
  EncoderOutput<T> out;
  Tensor<T> x = images;
  for (int s = 0; s < 4; ++s) {
    for (const auto& conv : stages_[s]) {
      x = ops::relu(tape, ops::conv2d(tape, x, conv.weight, conv.bias, conv.stride, conv.pad));
    }
    out.f[s] = x;
  }
  return out;
}

template <typename T>
EncoderOutput<T> fuse_auxiliary(Tape<T>& tape, const EncoderOutput<T>& img, const EncoderOutput<T>& aux) {
  EncoderOutput<T> out = img;
  for (int s = 0; s < 4; ++s) {
    if (img.f[s].shape() != aux.f[s].shape()) {
      throw ShapeError("auxiliary stage " + std::to_string(s + 1) + " shape " + shape_str(aux.f[s].shape()) +
                       " differs from image stage shape " + shape_str(img.f[s].shape()));
    }
  }
  for (int s = 2; s < 4; ++s) out.f[s] = ops::mul(tape, aux.f[s], img.f[s]);
  return out;
}

template class Encoder<float>;
template class Encoder<double>;
template EncoderOutput<float> fuse_auxiliary(Tape<float>&, const EncoderOutput<float>&, const EncoderOutput<float>&);
template EncoderOutput<double> fuse_auxiliary(Tape<double>&, const EncoderOutput<double>&,
                                              const EncoderOutput<double>&);

}  // namespace ufo
