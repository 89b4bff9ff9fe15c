#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "model/config.hpp"

namespace ufo {

struct TrainConfig {
  double lr = 1e-5;
  int64_t steps = 1000;
  int batch_groups = 2;  // B; larger batches (8 groups) are reachable by config
  int64_t halve_every = 2000;
  uint64_t seed = 0;
  bool freeze_classifier = false;
  int64_t checkpoint_interval = 0;  // 0: only the final checkpoint
  bool wbce_swap_gamma = false;
  bool hflip = false;
  // Rotate the hue of each group in a batch by its own random amount.
  int64_t log_every = 1;
};

struct DataConfig {
  std::string path;
  double train_fraction = 0.8;
  uint64_t split_seed = 0;
};

struct AblationConfig {
  bool alpha_on = true;
  bool beta_on = true;
  bool transformer_on = true;
};

// Micro-model geometry for the end-to-end gradient check.
struct GradCheckConfig {
  int height = 32;
  int width = 32;
  int group_size = 2;
  int batch_groups = 1;
  double eps = 1e-5;
  double tol = 1e-4;
  uint64_t seed = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AblationConfig ablation;
  GradCheckConfig gradcheck;

  // Model config with the ablation toggles applied.
  ModelConfig effective_model() const;
  void validate() const;
  nlohmann::json to_json() const;
  // Sections model, train, data and ablation must be present; gradcheck is
  // optional. Unknown keys anywhere are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace ufo
