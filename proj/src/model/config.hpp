#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace ufo {

struct EncoderConfig {
  int in_channels = 3;
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  // Convolutions per stage; the first one is the 4×4 stride-2 downsample.
  int convs_per_stage = 2;
};

struct TransformerConfig {
  int num_blocks = 2;
  int num_heads = 2;
  int model_dim = 64;   // attention projection width D
  int mlp_hidden = 64;  // hidden width of the token MLP
  std::vector<int> applied_stages{3, 4};
  // Runs the MLP sub-block before attention (literal Multi-Head(MLP(T)) order).
  bool mlp_first = false;
};

struct IntraMlpConfig {
  int k = 4;
  // Appends the query patch's own feature to each gathered neighbor.
  bool edge_concat = false;
};

struct SemanticConfig {
  int embed_dim = 128;
  int num_classes = 5;
};

struct DecoderConfig {
  bool alpha_on = true;
  bool beta_on = true;
  std::vector<int> modulated_stages{3, 4};
};

struct ModelConfig {
  EncoderConfig encoder;
  TransformerConfig transformer;
  IntraMlpConfig intra;
  SemanticConfig semantic;
  DecoderConfig decoder;
  bool transformer_on = true;
  uint64_t init_seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

}  // namespace ufo
