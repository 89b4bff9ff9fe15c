#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "model/config.hpp"
#include "model/params.hpp"
#include "tensor/tensor.hpp"

namespace ufo {

// All patches of one group as a single sequence: tokens (B, N·h·w, C), token
// t = n·h·w + i·w + j holds image n's pixel (i, j).
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;
  int64_t group_size = 0;
  int64_t h = 0, w = 0;
};

template <typename T>
TokenSequence<T> tokenize(Tape<T>& tape, const Tensor<T>& features, int64_t group_size);

// Inverse of tokenize: back to (B·N, C, h, w).
template <typename T>
Tensor<T> detokenize(Tape<T>& tape, const TokenSequence<T>& seq);

template <typename T>
struct TransformerBlockParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;
};

// Pre-norm encoder block: x += MSA(LN(x)); x += MLP(LN(x)). No positional
// embedding is added anywhere.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(const std::string& prefix, int channels, const TransformerConfig& cfg, ParameterStore<T>& store);

  // When `attention` is non-null it receives the (B, heads, P, P) weights.
  TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& seq, Tensor<T>* attention = nullptr) const;

  TransformerBlockParams<T>& params() { return p_; }
  const TransformerBlockParams<T>& params() const { return p_; }

 private:
  Tensor<T> attention_branch(Tape<T>& tape, const Tensor<T>& x, Tensor<T>* attention) const;
  Tensor<T> mlp_branch(Tape<T>& tape, const Tensor<T>& x) const;

  int channels_;
  TransformerConfig cfg_;
  TransformerBlockParams<T> p_;
};

// Runs the configured blocks over stages 3 and/or 4, each stage with its own
// parameters. Unselected stages are returned unchanged.
template <typename T>
class GroupTransformer {
 public:
  GroupTransformer(const TransformerConfig& cfg, int c3, int c4, ParameterStore<T>& store,
                   const std::string& prefix = "transformer");

  std::pair<Tensor<T>, Tensor<T>> apply(Tape<T>& tape, const Tensor<T>& f3, const Tensor<T>& f4,
                                        int64_t group_size) const;

  std::vector<TransformerBlock<T>>& blocks(int stage) { return blocks_.at(stage); }
  bool applies_to(int stage) const { return blocks_.contains(stage); }

 private:
  Tensor<T> run_stage(Tape<T>& tape, int stage, const Tensor<T>& f, int64_t group_size) const;

  TransformerConfig cfg_;
  std::map<int, std::vector<TransformerBlock<T>>> blocks_;
};

}  // namespace ufo
