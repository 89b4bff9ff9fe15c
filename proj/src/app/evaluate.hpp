#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "app/run_config.hpp"
#include "data/dataset.hpp"
#include "loss/metrics.hpp"
#include "model/network.hpp"

namespace ufo {

enum class EvalSplit { kTrain, kVal, kAll };
EvalSplit parse_eval_split(const std::string& name);

// Group ids of a split under the config's data section.
std::vector<int64_t> split_ids(const RunConfig& cfg, const DatasetManifest& manifest, EvalSplit split);

// Runs the model group by group without recording gradients.
MetricReport evaluate_groups(const UfoNet<float>& net, const std::filesystem::path& data_root,
                             const DatasetManifest& manifest, const std::vector<int64_t>& ids,
                             bool with_aux = false);

// Scores the ground-truth masks against themselves (pipeline oracle).
MetricReport evaluate_oracle(const std::filesystem::path& data_root, const DatasetManifest& manifest,
                             const std::vector<int64_t>& ids);

// Writes report.json and curves.csv into out_dir.
void write_report(const MetricReport& report, const std::filesystem::path& out_dir);

// Predicts masks for every .ppm in `group_dir` (sorted by name) as one group
// and writes <stem>.pgm with values round(p·255) to out_dir. With aux_dir,
// the same file names are read from it as auxiliary images.
std::vector<std::filesystem::path> infer_group(const UfoNet<float>& net, const std::filesystem::path& group_dir,
                                               const std::filesystem::path& out_dir,
                                               const std::optional<std::filesystem::path>& aux_dir = std::nullopt);

}  // namespace ufo
