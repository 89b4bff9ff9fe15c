#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "data/dataset.hpp"

namespace ufo {

enum class ShapeKind { kDisk = 0, kSquare, kTriangle, kCross, kRing };

inline constexpr std::array<const char*, 5> kShapeVocabulary = {"disk", "square", "triangle", "cross", "ring"};

ShapeKind shape_kind_from_name(const std::string& name);

// A shape centered at (cx, cy) in pixel coordinates; `radius` is the
// circumradius of its outline.
struct ShapeInstance {
  ShapeKind kind = ShapeKind::kDisk;
  double cx = 0, cy = 0, radius = 1;
};

// Whether the point (x, y) lies inside the shape (boundary included).
bool shape_contains(const ShapeInstance& s, double x, double y);

// Pixel-center rasterization: pixel (i, j) is set when (j + 0.5, i + 0.5) is inside.
std::vector<uint8_t> rasterize(const ShapeInstance& s, int height, int width);

struct SynthConfig {
  uint64_t seed = 0;
  int height = 64;
  int width = 64;
  std::vector<std::string> classes{"disk", "square", "triangle", "cross", "ring"};
  int group_size = 5;
  int groups_per_class = 4;
  int min_distractors = 0;
  int max_distractors = 2;
  double min_radius = 8.0;
  double max_radius = 13.0;
  double hue_jitter = 0.1;          // ± around the per-group hue
  double distractor_hue_gap = 0.2;  // minimum circular hue distance of distractors
  double noise = 0.03;
  bool aux = false;                 // also render auxiliary (flow-like) maps
  int max_attempts = 500;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static SynthConfig from_json(const nlohmann::json& j);
};

// Writes images/, masks/ (and aux/) plus manifest.json under `out_dir`.
// Group g has class g mod num_classes; each group draws from its own seeded
// stream, so the output is a pure function of the config. When `layouts` is
// given it receives the shapes of every image in manifest order, co-object
// first.
DatasetManifest synthesize(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                           std::vector<std::vector<ShapeInstance>>* layouts = nullptr);

}  // namespace ufo
