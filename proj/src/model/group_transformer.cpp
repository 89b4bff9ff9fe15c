#include "model/group_transformer.hpp"

#include <cmath>

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
TokenSequence<T> tokenize(Tape<T>& tape, const Tensor<T>& features, int64_t group_size) {
  if (features.rank() != 4) throw ShapeError("tokenize expects (B*N,C,h,w), got " + shape_str(features.shape()));
  if (group_size < 1 || features.dim(0) % group_size != 0) {
    throw ShapeError("batch dim " + std::to_string(features.dim(0)) + " not divisible by group size " +
                     std::to_string(group_size));
  }
  const int64_t b = features.dim(0) / group_size, c = features.dim(1), h = features.dim(2), w = features.dim(3);
  // (B·N, C, h, w) -> (B, N, C, h·w) -> (B, N, h·w, C) -> (B, N·h·w, C)
  auto x = ops::reshape(tape, features, {b, group_size, c, h * w});
  x = ops::permute(tape, x, {0, 1, 3, 2});
  x = ops::reshape(tape, x, {b, group_size * h * w, c});
  return {x, group_size, h, w};
}

template <typename T>
Tensor<T> detokenize(Tape<T>& tape, const TokenSequence<T>& seq) {
  const auto& t = seq.tokens;
  const int64_t b = t.dim(0), c = t.dim(2), n = seq.group_size, hw = seq.h * seq.w;
  if (t.dim(1) != n * hw) {
    throw ShapeError("token count " + std::to_string(t.dim(1)) + " does not equal N*h*w = " + std::to_string(n * hw));
  }
  auto x = ops::reshape(tape, t, {b, n, hw, c});
  x = ops::permute(tape, x, {0, 1, 3, 2});
  return ops::reshape(tape, x, {b * n, c, seq.h, seq.w});
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& prefix, int channels, const TransformerConfig& cfg,
                                      ParameterStore<T>& store)
    : channels_(channels), cfg_(cfg) {
  if (cfg.num_heads < 1 || cfg.model_dim % cfg.num_heads != 0) {
    throw ConfigError("transformer.model_dim (" + std::to_string(cfg.model_dim) +
                      ") must be divisible by transformer.num_heads (" + std::to_string(cfg.num_heads) + ")");
  }
  const int64_t c = channels, d = cfg.model_dim, hid = cfg.mlp_hidden;
  p_.ln1_gamma = store.add(prefix + ".ln1.gamma", {c}, Init::kOnes);
  p_.ln1_beta = store.add(prefix + ".ln1.beta", {c}, Init::kZeros);
  p_.wq = store.add(prefix + ".attn.wq", {c, d}, Init::kGlorot, c, d);
  p_.bq = store.add(prefix + ".attn.bq", {d}, Init::kZeros);
  p_.wk = store.add(prefix + ".attn.wk", {c, d}, Init::kGlorot, c, d);
  p_.bk = store.add(prefix + ".attn.bk", {d}, Init::kZeros);
  p_.wv = store.add(prefix + ".attn.wv", {c, d}, Init::kGlorot, c, d);
  p_.bv = store.add(prefix + ".attn.bv", {d}, Init::kZeros);
  p_.wo = store.add(prefix + ".attn.wo", {d, c}, Init::kGlorot, d, c);
  p_.bo = store.add(prefix + ".attn.bo", {c}, Init::kZeros);
  p_.ln2_gamma = store.add(prefix + ".ln2.gamma", {c}, Init::kOnes);
  p_.ln2_beta = store.add(prefix + ".ln2.beta", {c}, Init::kZeros);
  p_.w1 = store.add(prefix + ".mlp.w1", {c, hid}, Init::kGlorot, c, hid);
  p_.b1 = store.add(prefix + ".mlp.b1", {hid}, Init::kZeros);
  p_.w2 = store.add(prefix + ".mlp.w2", {hid, c}, Init::kGlorot, hid, c);
  p_.b2 = store.add(prefix + ".mlp.b2", {c}, Init::kZeros);
}

template <typename T>
Tensor<T> TransformerBlock<T>::attention_branch(Tape<T>& tape, const Tensor<T>& x, Tensor<T>* attention) const {
  const int64_t b = x.dim(0), p = x.dim(1);
  const int64_t heads = cfg_.num_heads, dh = cfg_.model_dim / cfg_.num_heads;
  auto ln = ops::layer_norm(tape, x, p_.ln1_gamma, p_.ln1_beta);
  auto split = [&](const Tensor<T>& w, const Tensor<T>& bias) {
    auto y = ops::linear(tape, ln, w, bias);
    y = ops::reshape(tape, y, {b, p, heads, dh});
    return ops::permute(tape, y, {0, 2, 1, 3});  // (B, heads, P, dh)
  };
  auto q = split(p_.wq, p_.bq);
  auto k = split(p_.wk, p_.bk);
  auto v = split(p_.wv, p_.bv);
  auto scores = ops::scale(tape, ops::matmul(tape, q, k, false, true), T(1) / std::sqrt(static_cast<T>(dh)));
  auto attn = ops::softmax(tape, scores, -1);
  if (attention != nullptr) *attention = attn;
  auto ctx = ops::matmul(tape, attn, v);  // (B, heads, P, dh)
  ctx = ops::permute(tape, ctx, {0, 2, 1, 3});
  ctx = ops::reshape(tape, ctx, {b, p, heads * dh});
  return ops::linear(tape, ctx, p_.wo, p_.bo);
}

template <typename T>
Tensor<T> TransformerBlock<T>::mlp_branch(Tape<T>& tape, const Tensor<T>& x) const {
  auto ln = ops::layer_norm(tape, x, p_.ln2_gamma, p_.ln2_beta);
  auto hdn = ops::relu(tape, ops::linear(tape, ln, p_.w1, p_.b1));
  return ops::linear(tape, hdn, p_.w2, p_.b2);
}

template <typename T>
TokenSequence<T> TransformerBlock<T>::forward(Tape<T>& tape, const TokenSequence<T>& seq, Tensor<T>* attention) const {
  if (seq.tokens.rank() != 3 || seq.tokens.dim(2) != channels_) {
    throw ShapeError("transformer block expects (B,P," + std::to_string(channels_) + ") tokens, got " +
                     shape_str(seq.tokens.shape()));
  }
  Tensor<T> x = seq.tokens;
  if (cfg_.mlp_first) {
    x = ops::add(tape, x, mlp_branch(tape, x));
    x = ops::add(tape, x, attention_branch(tape, x, attention));
  } else {
    x = ops::add(tape, x, attention_branch(tape, x, attention));
    x = ops::add(tape, x, mlp_branch(tape, x));
  }
  TokenSequence<T> out = seq;
  out.tokens = x;
  return out;
}

template <typename T>
GroupTransformer<T>::GroupTransformer(const TransformerConfig& cfg, int c3, int c4, ParameterStore<T>& store,
                                      const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.num_blocks < 1) throw ConfigError("transformer.num_blocks must be >= 1");
  for (int stage : cfg.applied_stages) {
    if (stage != 3 && stage != 4) throw ConfigError("transformer.applied_stages may only contain 3 and 4");
    if (blocks_.contains(stage)) continue;
    auto& list = blocks_[stage];
    for (int i = 0; i < cfg.num_blocks; ++i) {
      list.emplace_back(prefix + ".s" + std::to_string(stage) + ".block" + std::to_string(i), stage == 3 ? c3 : c4,
                        cfg, store);
    }
  }
}

template <typename T>
Tensor<T> GroupTransformer<T>::run_stage(Tape<T>& tape, int stage, const Tensor<T>& f, int64_t group_size) const {
  auto seq = tokenize(tape, f, group_size);
  for (const auto& block : blocks_.at(stage)) seq = block.forward(tape, seq);
  return detokenize(tape, seq);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> GroupTransformer<T>::apply(Tape<T>& tape, const Tensor<T>& f3, const Tensor<T>& f4,
                                                           int64_t group_size) const {
  Tensor<T> o3 = applies_to(3) ? run_stage(tape, 3, f3, group_size) : f3;
  Tensor<T> o4 = applies_to(4) ? run_stage(tape, 4, f4, group_size) : f4;
  return {o3, o4};
}

template struct TokenSequence<float>;
template struct TokenSequence<double>;
template TokenSequence<float> tokenize(Tape<float>&, const Tensor<float>&, int64_t);
template TokenSequence<double> tokenize(Tape<double>&, const Tensor<double>&, int64_t);
template Tensor<float> detokenize(Tape<float>&, const TokenSequence<float>&);
template Tensor<double> detokenize(Tape<double>&, const TokenSequence<double>&);
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class GroupTransformer<float>;
template class GroupTransformer<double>;

}  // namespace ufo
