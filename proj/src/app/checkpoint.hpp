#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "model/network.hpp"
#include "tensor/adam.hpp"

namespace ufo {

// File layout, all integers little-endian:
//   "UFOCKPT1" | u32 record count | records
//   record: u32 name length | name bytes (UTF-8) | u8 dtype (0 = f32, 1 = f64)
//           | u32 rank | u32 dims[rank] | values
inline constexpr char kCheckpointMagic[8] = {'U', 'F', 'O', 'C', 'K', 'P', 'T', '1'};
enum class DType : uint8_t { kF32 = 0, kF64 = 1 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<uint32_t> dims;
  std::vector<float> f32;   // used when dtype == kF32
  std::vector<double> f64;  // used when dtype == kF64

  std::size_t numel() const;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
// Throws IoError for unreadable/truncated files and DataError for a bad
// magic or an unknown dtype tag.
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

// Optimizer state lives under these reserved prefixes.
inline constexpr const char* kAdamMomentPrefix = "__adam__/m/";
inline constexpr const char* kAdamVariancePrefix = "__adam__/v/";
inline constexpr const char* kAdamStepRecord = "__adam__/t";
inline constexpr const char* kTrainStepRecord = "__train__/step";

struct TrainingState {
  AdamState<float> adam;
  std::vector<std::string> trainable;  // names matching adam.m / adam.v order
  int64_t step = 0;
};

void save_model(const std::filesystem::path& path, const UfoNet<float>& net, const TrainingState* state = nullptr);

// Copies parameters into `net`. A missing parameter or shape mismatch throws
// ShapeError naming the tensor. When `state` is given, its `trainable` list
// selects which moments to restore; absent optimizer records leave it fresh.
void load_model(const std::filesystem::path& path, UfoNet<float>& net, TrainingState* state = nullptr);

}  // namespace ufo
