#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensor/tensor.hpp"

namespace ufo {

struct GroupRecord {
  int64_t id = 0;
  int class_id = 0;
  std::vector<std::string> images;  // relative to the dataset root
  std::vector<std::string> masks;
  std::vector<std::string> aux;     // empty when absent
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> classes;
  int group_size = 0;
  std::vector<GroupRecord> groups;

  nlohmann::json to_json() const;
  // Throws ManifestError on schema violations or non-uniform group sizes.
  static DatasetManifest from_json(const nlohmann::json& j);
  const GroupRecord& group(int64_t id) const;
  bool has_aux() const;
};

inline constexpr const char* kManifestFile = "manifest.json";

void save_manifest(const DatasetManifest& m, const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& root);

// B groups of N images stacked group-major: index b·N + n.
struct GroupBatch {
  Tensor<float> images;  // (B·N, 3, H, W) in [0, 1]
  Tensor<float> masks;   // (B·N, 1, H, W) in {0, 1}
  std::vector<int64_t> labels;
  int group_size = 0;
  Tensor<float> aux;     // same shape as images, undefined when absent
  std::vector<int64_t> group_ids;

  int64_t num_groups() const { return static_cast<int64_t>(labels.size()); }
};

// 8-bit raw value to [0, 1] image intensity / {0, 1} mask label.
inline float normalize_pixel(uint8_t v) { return static_cast<float>(v) / 255.0f; }
inline float binarize_mask(uint8_t v) { return v >= 128 ? 1.0f : 0.0f; }

struct LoadOptions {
  std::optional<uint64_t> shuffle_seed;  // permutes the group order when set
  bool with_aux = false;
  bool hflip = false;                    // mirror every image/mask horizontally
};

// Reads the listed groups from disk. Throws IoError naming the offending
// path for missing or corrupt files, ShapeError for mixed image sizes.
GroupBatch load_batch(const std::filesystem::path& root, const DatasetManifest& manifest,
                      const std::vector<int64_t>& group_ids, const LoadOptions& opts = {});

// Deterministic group-level split: the first round(train_fraction · G) groups
// of a seeded permutation train, the rest validate.
struct GroupSplit {
  std::vector<int64_t> train;
  std::vector<int64_t> val;
};
GroupSplit split_groups(const DatasetManifest& manifest, double train_fraction, uint64_t seed);

// Decoded groups kept in memory for repeated batching during training.
class GroupCache {
 public:
  GroupCache(std::filesystem::path root, DatasetManifest manifest, bool with_aux);
  GroupBatch batch(const std::vector<int64_t>& group_ids, bool hflip = false);
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  struct Entry {
    std::vector<float> images, masks, aux;
    int height = 0, width = 0;
    int class_id = 0;
  };
  const Entry& fetch(int64_t id);

  std::filesystem::path root_;
  DatasetManifest manifest_;
  bool with_aux_;
  std::map<int64_t, Entry> entries_;
};

}  // namespace ufo
