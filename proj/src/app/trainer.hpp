#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "app/checkpoint.hpp"
#include "app/run_config.hpp"
#include "data/dataset.hpp"
#include "loss/losses.hpp"

namespace ufo {

// lr · 0.5^floor(step / halve_every), step counted from 0.
double scheduled_lr(const TrainConfig& cfg, int64_t step);

// Group ids drawn for `step`; a pure function of (train ids, B, seed, step).
std::vector<int64_t> batch_group_ids(const std::vector<int64_t>& train_ids, int batch_groups, uint64_t seed,
                                     int64_t step);
bool batch_hflip(uint64_t seed, int64_t step);

// Names of the parameters the optimizer updates, in store order.
std::vector<std::string> trainable_parameters(const UfoNet<float>& net, bool freeze_classifier);

struct StepLog {
  int64_t step = 0;  // 1-based count of completed steps
  LossBreakdown loss;
  double lr = 0;
};

struct TrainOptions {
  std::filesystem::path data_root;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  // Stop at this step instead of train.steps (the schedule is unchanged).
  std::optional<int64_t> stop_at;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<StepLog> history;
  int64_t final_step = 0;
  GroupSplit split;
};

// Trains on the train split of the dataset and writes `model.ckpt` (plus
// `model_step_<s>.ckpt` every checkpoint_interval steps) and
// `train_log.jsonl` under out_dir. Throws NumericError on a non-finite loss.
TrainResult train(const RunConfig& cfg, const TrainOptions& opts);

// Loss breakdown of the model over every listed group, one group per forward
// pass, averaged over groups. Uses the same loss options as training.
LossBreakdown dataset_loss(const UfoNet<float>& net, const std::filesystem::path& data_root,
                           const DatasetManifest& manifest, const std::vector<int64_t>& ids, const TrainConfig& cfg);

// One optimization step on an in-memory batch. Exposed for tests.
StepLog train_step(UfoNet<float>& net, TrainingState& state, const GroupBatch& batch, const TrainConfig& cfg);

}  // namespace ufo
