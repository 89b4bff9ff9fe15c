#include "app/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>

#include "common/error.hpp"

namespace ufo {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::size_t CheckpointRecord::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw IoError("truncated checkpoint " + path.string());
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

CheckpointRecord tensor_record(const std::string& name, std::span<const float> values, const Shape& shape) {
  CheckpointRecord r;
  r.name = name;
  r.dtype = DType::kF32;
  for (auto d : shape) r.dims.push_back(static_cast<uint32_t>(d));
  r.f32.assign(values.begin(), values.end());
  return r;
}

CheckpointRecord scalar_f64(const std::string& name, double v) {
  CheckpointRecord r;
  r.name = name;
  r.dtype = DType::kF64;
  r.dims = {1};
  r.f64 = {v};
  return r;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<uint32_t>(out, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    put<uint32_t>(out, static_cast<uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<uint8_t>(out, static_cast<uint8_t>(r.dtype));
    put<uint32_t>(out, static_cast<uint32_t>(r.dims.size()));
    for (auto d : r.dims) put<uint32_t>(out, d);
    const std::size_t n = r.numel();
    if (r.dtype == DType::kF32) {
      if (r.f32.size() != n) throw ShapeError("checkpoint record " + r.name + " has inconsistent size");
      for (float v : r.f32) put<uint32_t>(out, std::bit_cast<uint32_t>(v));
    } else {
      if (r.f64.size() != n) throw ShapeError("checkpoint record " + r.name + " has inconsistent size");
      for (double v : r.f64) put<uint64_t>(out, std::bit_cast<uint64_t>(v));
    }
  }
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic))) throw IoError("truncated checkpoint " + path.string());
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto count = get<uint32_t>(in, path);
  std::vector<CheckpointRecord> records;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = get<uint32_t>(in, path);
    if (len > (1u << 16)) throw DataError(path.string() + ": implausible record name length");
    r.name.resize(len);
    if (!in.read(r.name.data(), len)) throw IoError("truncated checkpoint " + path.string());
    const auto tag = get<uint8_t>(in, path);
    if (tag > 1) {
      throw DataError(path.string() + ": record " + r.name + " has unknown dtype tag " + std::to_string(tag));
    }
    r.dtype = static_cast<DType>(tag);
    const auto rank = get<uint32_t>(in, path);
    if (rank > 8) throw DataError(path.string() + ": record " + r.name + " has implausible rank");
    for (uint32_t k = 0; k < rank; ++k) r.dims.push_back(get<uint32_t>(in, path));
    const std::size_t n = r.numel();
    if (n > (std::size_t{1} << 32)) throw DataError(path.string() + ": record " + r.name + " is implausibly large");
    if (r.dtype == DType::kF32) {
      r.f32.resize(n);
      for (auto& v : r.f32) v = std::bit_cast<float>(get<uint32_t>(in, path));
    } else {
      r.f64.resize(n);
      for (auto& v : r.f64) v = std::bit_cast<double>(get<uint64_t>(in, path));
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_model(const std::filesystem::path& path, const UfoNet<float>& net, const TrainingState* state) {
  std::vector<CheckpointRecord> records;
  const auto& store = net.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.tensors()[i];
    records.push_back(tensor_record(store.names()[i], t.data(), t.shape()));
  }
  if (state != nullptr) {
    if (!state->adam.m.empty()) {
      if (state->adam.m.size() != state->trainable.size()) {
        throw UsageError("optimizer state does not match the trainable parameter list");
      }
      for (std::size_t i = 0; i < state->trainable.size(); ++i) {
        const auto& name = state->trainable[i];
        const Shape& shape = store.get(name).shape();
        records.push_back(tensor_record(kAdamMomentPrefix + name, state->adam.m[i], shape));
        records.push_back(tensor_record(kAdamVariancePrefix + name, state->adam.v[i], shape));
      }
    }
    records.push_back(scalar_f64(kAdamStepRecord, static_cast<double>(state->adam.t)));
    records.push_back(scalar_f64(kTrainStepRecord, static_cast<double>(state->step)));
  }
  write_checkpoint(path, records);
}

void load_model(const std::filesystem::path& path, UfoNet<float>& net, TrainingState* state) {
  std::map<std::string, CheckpointRecord> by_name;
  for (auto& r : read_checkpoint(path)) by_name.emplace(r.name, std::move(r));

  auto fetch = [&](const std::string& name, const Shape& shape) -> const std::vector<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("checkpoint " + path.string() + " has no tensor " + name);
    const auto& r = it->second;
    bool same = r.dims.size() == shape.size() && r.dtype == DType::kF32;
    for (std::size_t k = 0; same && k < shape.size(); ++k) same = r.dims[k] == shape[k];
    if (!same) {
      Shape got(r.dims.begin(), r.dims.end());
      throw ShapeError("tensor " + name + ": checkpoint holds " + shape_str(got) + ", model expects " +
                       shape_str(shape));
    }
    return r.f32;
  };

  auto& store = net.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto t = store.tensors()[i];
    const auto& v = fetch(store.names()[i], t.shape());
    std::copy(v.begin(), v.end(), t.data().begin());
  }
  if (state == nullptr) return;

  auto scalar = [&](const char* name) -> std::optional<double> {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.dtype != DType::kF64 || it->second.f64.size() != 1) return std::nullopt;
    return it->second.f64[0];
  };
  state->step = static_cast<int64_t>(scalar(kTrainStepRecord).value_or(0.0));
  state->adam.t = static_cast<int64_t>(scalar(kAdamStepRecord).value_or(0.0));
  state->adam.m.clear();
  state->adam.v.clear();
  if (state->trainable.empty() || !by_name.contains(kAdamMomentPrefix + state->trainable.front())) return;
  for (const auto& name : state->trainable) {
    const Shape& shape = store.get(name).shape();
    state->adam.m.push_back(fetch(kAdamMomentPrefix + name, shape));
    state->adam.v.push_back(fetch(kAdamVariancePrefix + name, shape));
  }
}

}  // namespace ufo
