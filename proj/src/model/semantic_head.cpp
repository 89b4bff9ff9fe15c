#include "model/semantic_head.hpp"

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
SemanticHead<T>::SemanticHead(const SemanticConfig& cfg, int in_channels, ParameterStore<T>& store,
                              const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.embed_dim < 1) throw ConfigError("semantic.embed_dim must be >= 1");
  if (cfg.num_classes < 2) throw ConfigError("semantic.num_classes must be >= 2");
  const int64_t e = cfg.embed_dim, c = in_channels;
  conv_w = store.add(prefix + ".conv.weight", {e, c, 3, 3}, Init::kGlorot, c * 9, e * 9);
  conv_b = store.add(prefix + ".conv.bias", {e}, Init::kZeros);
  fc_w = store.add(prefix + ".fc.weight", {e, cfg.num_classes}, Init::kGlorot, e, cfg.num_classes);
  fc_b = store.add(prefix + ".fc.bias", {cfg.num_classes}, Init::kZeros);
}

template <typename T>
SemanticOutput<T> SemanticHead<T>::forward(Tape<T>& tape, const Tensor<T>& f4) const {
  auto x = ops::relu(tape, ops::conv2d(tape, f4, conv_w, conv_b, 1, 1));
  const int64_t bn = x.dim(0), e = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto alpha = ops::reduce(tape, ops::Reduce::kMean, ops::reshape(tape, x, {bn, e, hw}), 2);
  auto logits = ops::linear(tape, alpha, fc_w, fc_b);
  return {alpha, logits};
}

template class SemanticHead<float>;
template class SemanticHead<double>;

}  // namespace ufo
