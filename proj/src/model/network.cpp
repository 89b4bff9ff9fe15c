#include "model/network.hpp"

#include <algorithm>

#include "tensor/ops.hpp"

namespace ufo {

void ModelConfig::validate() const {
  if (encoder.in_channels < 1) throw ConfigError("encoder.in_channels must be >= 1");
  if (encoder.convs_per_stage < 1) throw ConfigError("encoder.convs_per_stage must be >= 1");
  for (int c : encoder.stage_channels) {
    if (c < 1) throw ConfigError("encoder.stage_channels must all be >= 1");
  }
  if (transformer.num_blocks < 1) throw ConfigError("transformer.num_blocks must be >= 1");
  if (transformer.num_heads < 1) throw ConfigError("transformer.num_heads must be >= 1");
  if (transformer.model_dim < 1 || transformer.model_dim % transformer.num_heads != 0) {
    throw ConfigError("transformer.model_dim must be a positive multiple of transformer.num_heads");
  }
  if (transformer.mlp_hidden < 1) throw ConfigError("transformer.mlp_hidden must be >= 1");
  for (int s : transformer.applied_stages) {
    if (s != 3 && s != 4) throw ConfigError("transformer.applied_stages may only contain 3 and 4");
  }
  if (intra.k < 1) throw ConfigError("intra_mlp.k must be >= 1");
  if (semantic.embed_dim < 1) throw ConfigError("semantic.embed_dim must be >= 1");
  if (semantic.num_classes < 2) throw ConfigError("semantic.num_classes must be >= 2");
  for (int s : decoder.modulated_stages) {
    if (s < 1 || s > 4) throw ConfigError("decoder.modulated_stages entries must be in 1..4");
  }
}

namespace {
uint64_t validated_seed(const ModelConfig& cfg) {
  cfg.validate();
  return cfg.init_seed;
}
}  // namespace

template <typename T>
UfoNet<T>::UfoNet(const ModelConfig& cfg)
    : cfg_(cfg), store_(validated_seed(cfg)), encoder_(cfg.encoder, store_) {
  const auto& ch = cfg.encoder.stage_channels;
  if (cfg.transformer_on && !cfg.transformer.applied_stages.empty()) {
    transformer_.emplace(cfg.transformer, ch[2], ch[3], store_);
  }
  if (cfg.decoder.beta_on) intra_.emplace(cfg.intra, ch[3], store_);
  semantic_.emplace(cfg.semantic, ch[3], store_);
  decoder_.emplace(cfg.decoder, ch, cfg.semantic.embed_dim, store_);
}

template <typename T>
NetworkOutput<T> UfoNet<T>::forward(Tape<T>& tape, const Tensor<T>& images, int64_t group_size, const Tensor<T>* aux,
                                    const IndexTensor* frozen_neighbors) const {
  NetworkOutput<T> out;
  auto enc = encoder_.encode(tape, images);
  if (aux != nullptr && aux->defined()) {
    if (aux->shape() != images.shape()) {
      throw ShapeError("auxiliary images " + shape_str(aux->shape()) + " differ from images " +
                       shape_str(images.shape()));
    }
    enc = fuse_auxiliary(tape, enc, encoder_.encode(tape, *aux));
  }
  if (group_size < 1 || images.dim(0) % group_size != 0) {
    throw ShapeError("batch of " + std::to_string(images.dim(0)) + " images is not a whole number of groups of " +
                     std::to_string(group_size));
  }
  Tensor<T> f3 = enc.f[2], f4 = enc.f[3];
  if (transformer_) std::tie(f3, f4) = transformer_->apply(tape, enc.f[2], enc.f[3], group_size);
  if (intra_) out.beta = intra_->forward(tape, enc.f[3], frozen_neighbors, &out.neighbors);
  auto sem = semantic_->forward(tape, f4);
  out.alpha = sem.alpha;
  out.logits = sem.logits;
  out.features = {enc.f[0], enc.f[1], f3, f4};
  out.probs = decoder_->decode(tape, out.features, out.alpha, out.beta);
  return out;
}

template <typename T>
std::vector<std::string> UfoNet<T>::classifier_parameter_names() const {
  return {"semantic.fc.weight", "semantic.fc.bias"};
}

template class UfoNet<float>;
template class UfoNet<double>;

}  // namespace ufo
