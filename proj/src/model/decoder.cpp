#include "model/decoder.hpp"

#include <algorithm>

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
Decoder<T>::Decoder(const DecoderConfig& cfg, const std::array<int, 4>& channels, int alpha_dim,
                    ParameterStore<T>& store, const std::string& prefix)
    : cfg_(cfg), channels_(channels) {
  for (int s : cfg.modulated_stages) {
    if (s < 1 || s > 4) throw ConfigError("decoder.modulated_stages entries must be in 1..4");
  }
  for (int s = 4; s >= 1; --s) {
    Stage& st = stages_[s - 1];
    const std::string base = prefix + ".s" + std::to_string(s);
    const int64_t out = channels[s - 1];
    const int64_t in = s == 4 ? channels[3] : channels[s];
    st.conv_w = store.add(base + ".conv.weight", {out, in, 3, 3}, Init::kGlorot, in * 9, out * 9);
    st.conv_b = store.add(base + ".conv.bias", {out}, Init::kZeros);
    st.modulated = std::find(cfg.modulated_stages.begin(), cfg.modulated_stages.end(), s) != cfg.modulated_stages.end();
    if (st.modulated && cfg.alpha_on) {
      st.alpha_w = store.add(base + ".alpha.weight", {alpha_dim, out}, Init::kGlorot, alpha_dim, out);
      st.alpha_b = store.add(base + ".alpha.bias", {out}, Init::kZeros);
    }
    if (s > 1) {
      const int64_t skip = channels[s - 2];
      st.lateral_w = store.add(base + ".lateral.weight", {out, skip, 1, 1}, Init::kGlorot, skip, out);
      st.lateral_b = store.add(base + ".lateral.bias", {out}, Init::kZeros);
    }
  }
  final_w = store.add(prefix + ".final.weight", {1, channels[0], 3, 3}, Init::kGlorot, int64_t{channels[0]} * 9, 9);
  final_b = store.add(prefix + ".final.bias", {1}, Init::kZeros);
}

template <typename T>
Tensor<T> Decoder<T>::stage_body(Tape<T>& tape, int s, const Tensor<T>& x_in, const Tensor<T>& alpha,
                                 const Tensor<T>& beta) const {
  const Stage& st = stages_.at(static_cast<std::size_t>(s - 1));
  if (x_in.rank() != 4 || x_in.dim(1) != st.conv_w.dim(1)) {
    throw ShapeError("decoder stage " + std::to_string(s) + ": input " + shape_str(x_in.shape()) +
                     " does not have " + std::to_string(st.conv_w.dim(1)) + " channels");
  }
  auto x = ops::relu(tape, ops::conv2d(tape, x_in, st.conv_w, st.conv_b, 1, 1));
  if (!st.modulated) return x;
  const int64_t bn = x.dim(0), c = x.dim(1);
  if (cfg_.alpha_on) {
    if (!alpha.defined()) throw ShapeError("decoder stage " + std::to_string(s) + ": alpha_on but no alpha given");
    if (alpha.rank() != 2 || alpha.dim(0) != bn) {
      throw ShapeError("decoder stage " + std::to_string(s) + ": alpha " + shape_str(alpha.shape()) +
                       " does not match batch " + std::to_string(bn));
    }
    auto gate = ops::sigmoid(tape, ops::linear(tape, alpha, st.alpha_w, st.alpha_b));
    x = ops::mul(tape, x, ops::reshape(tape, gate, {bn, c, 1, 1}));
  }
  if (cfg_.beta_on) {
    if (!beta.defined()) throw ShapeError("decoder stage " + std::to_string(s) + ": beta_on but no beta given");
    if (beta.rank() != 4 || beta.dim(0) != bn || beta.dim(1) != 1 || x.dim(2) % beta.dim(2) != 0 ||
        x.dim(2) / beta.dim(2) != x.dim(3) / beta.dim(3) || x.dim(3) % beta.dim(3) != 0) {
      throw ShapeError("decoder stage " + std::to_string(s) + ": beta " + shape_str(beta.shape()) +
                       " cannot be resized to " + shape_str(x.shape()));
    }
    const int factor = static_cast<int>(x.dim(2) / beta.dim(2));
    x = ops::add(tape, x, ops::upsample_bilinear(tape, beta, factor));
  }
  return x;
}

template <typename T>
Tensor<T> Decoder<T>::decode(Tape<T>& tape, const std::array<Tensor<T>, 4>& features, const Tensor<T>& alpha,
                             const Tensor<T>& beta) const {
  for (int s = 0; s < 4; ++s) {
    if (!features[s].defined() || features[s].rank() != 4 || features[s].dim(1) != channels_[s]) {
      throw ShapeError("decoder: stage " + std::to_string(s + 1) + " feature has wrong shape " +
                       (features[s].defined() ? shape_str(features[s].shape()) : std::string("(undefined)")));
    }
  }
  Tensor<T> x = features[3];
  for (int s = 4; s >= 1; --s) {
    x = stage_body(tape, s, x, alpha, beta);
    if (s > 1) {
      const Stage& st = stages_[s - 1];
      const auto& skip = features[s - 2];
      x = ops::upsample_bilinear(tape, x, 2);
      if (x.dim(2) != skip.dim(2) || x.dim(3) != skip.dim(3)) {
        throw ShapeError("decoder stage " + std::to_string(s) + ": upsampled " + shape_str(x.shape()) +
                         " does not match skip " + shape_str(skip.shape()));
      }
      x = ops::add(tape, x, ops::conv2d(tape, skip, st.lateral_w, st.lateral_b, 1, 0));
    }
  }
  auto logit = ops::conv2d(tape, x, final_w, final_b, 1, 1);
  return ops::sigmoid(tape, ops::upsample_bilinear(tape, logit, 2));
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace ufo
