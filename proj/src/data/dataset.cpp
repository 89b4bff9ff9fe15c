#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "common/error.hpp"
#include "data/netpbm.hpp"

namespace ufo {

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json groups_json = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json r = {{"id", g.id}, {"class", g.class_id}, {"images", g.images}, {"masks", g.masks}};
    if (!g.aux.empty()) r["aux"] = g.aux;
    groups_json.push_back(std::move(r));
  }
  return {{"version", version}, {"classes", classes}, {"group_size", group_size}, {"groups", groups_json}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw ManifestError("unsupported manifest version " + std::to_string(m.version));
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.group_size = j.at("group_size").get<int>();
    if (m.group_size < 1) throw ManifestError("group_size must be >= 1");
    for (const auto& r : j.at("groups")) {
      GroupRecord g;
      g.id = r.at("id").get<int64_t>();
      g.class_id = r.at("class").get<int>();
      g.images = r.at("images").get<std::vector<std::string>>();
      g.masks = r.at("masks").get<std::vector<std::string>>();
      if (r.contains("aux")) g.aux = r.at("aux").get<std::vector<std::string>>();
      const auto n = static_cast<std::size_t>(m.group_size);
      if (g.images.size() != n || g.masks.size() != n || (!g.aux.empty() && g.aux.size() != n)) {
        throw ManifestError("group " + std::to_string(g.id) + " has " + std::to_string(g.images.size()) +
                            " images / " + std::to_string(g.masks.size()) + " masks, expected uniform size " +
                            std::to_string(m.group_size));
      }
      if (g.class_id < 0 || g.class_id >= static_cast<int>(m.classes.size())) {
        throw ManifestError("group " + std::to_string(g.id) + " has class " + std::to_string(g.class_id) +
                            " outside [0, " + std::to_string(m.classes.size()) + ")");
      }
      for (const auto& other : m.groups)
        if (other.id == g.id) throw ManifestError("duplicate group id " + std::to_string(g.id));
      m.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

const GroupRecord& DatasetManifest::group(int64_t id) const {
  for (const auto& g : groups)
    if (g.id == id) return g;
  throw IndexError("no group with id " + std::to_string(id) + " in manifest");
}

bool DatasetManifest::has_aux() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const auto& g) { return !g.aux.empty(); });
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& root) {
  const auto path = root / kManifestFile;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << m.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestFile;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return DatasetManifest::from_json(j);
}

namespace {

Image8 read_expect(const std::filesystem::path& path, int channels) {
  Image8 img = read_netpbm(path);
  if (img.channels != channels) {
    throw DataError(path.string() + ": expected " + std::to_string(channels) + " channel(s), got " +
                    std::to_string(img.channels));
  }
  return img;
}

// Interleaved HWC bytes to planar CHW floats, optionally mirrored.
void to_planar(const Image8& img, bool hflip, bool binary, float* dst) {
  const int h = img.height, w = img.width, c = img.channels;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int sj = hflip ? w - 1 - j : j;
        const uint8_t v = img.pixels[(static_cast<std::size_t>(i) * w + sj) * c + ch];
        dst[(static_cast<std::size_t>(ch) * h + i) * w + j] = binary ? binarize_mask(v) : normalize_pixel(v);
      }
}

void mirror_planar(std::vector<float>& v, int planes, int h, int w) {
  for (int p = 0; p < planes; ++p)
    for (int i = 0; i < h; ++i) {
      float* row = v.data() + (static_cast<std::size_t>(p) * h + i) * w;
      std::reverse(row, row + w);
    }
}

}  // namespace

GroupBatch load_batch(const std::filesystem::path& root, const DatasetManifest& manifest,
                      const std::vector<int64_t>& group_ids, const LoadOptions& opts) {
  if (group_ids.empty()) throw UsageError("load_batch needs at least one group id");
  std::vector<int64_t> order = group_ids;
  if (opts.shuffle_seed) {
    std::mt19937_64 rng(*opts.shuffle_seed);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
  }
  const int n = manifest.group_size;
  const int64_t bn = static_cast<int64_t>(order.size()) * n;
  int h = 0, w = 0;
  std::vector<float> images, masks, aux;
  GroupBatch batch;
  batch.group_size = n;
  int64_t slot = 0;
  for (int64_t id : order) {
    const GroupRecord& g = manifest.group(id);
    if (opts.with_aux && g.aux.empty()) throw DataError("group " + std::to_string(id) + " has no aux images");
    batch.labels.push_back(g.class_id);
    batch.group_ids.push_back(id);
    for (int k = 0; k < n; ++k, ++slot) {
      const Image8 img = read_expect(root / g.images[static_cast<std::size_t>(k)], 3);
      const Image8 msk = read_expect(root / g.masks[static_cast<std::size_t>(k)], 1);
      if (slot == 0) {
        h = img.height;
        w = img.width;
        images.resize(static_cast<std::size_t>(bn) * 3 * h * w);
        masks.resize(static_cast<std::size_t>(bn) * h * w);
        if (opts.with_aux) aux.resize(images.size());
      }
      const auto check = [&](const Image8& im, const std::string& rel) {
        if (im.height != h || im.width != w) {
          throw ShapeError((root / rel).string() + ": size " + std::to_string(im.width) + "x" +
                           std::to_string(im.height) + " differs from batch size " + std::to_string(w) + "x" +
                           std::to_string(h));
        }
      };
      check(img, g.images[static_cast<std::size_t>(k)]);
      check(msk, g.masks[static_cast<std::size_t>(k)]);
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      to_planar(img, opts.hflip, false, images.data() + slot * 3 * plane);
      to_planar(msk, opts.hflip, true, masks.data() + slot * plane);
      if (opts.with_aux) {
        const Image8 a = read_expect(root / g.aux[static_cast<std::size_t>(k)], 3);
        check(a, g.aux[static_cast<std::size_t>(k)]);
        to_planar(a, opts.hflip, false, aux.data() + slot * 3 * plane);
      }
    }
  }
  batch.images = Tensor<float>({bn, 3, h, w}, std::move(images));
  batch.masks = Tensor<float>({bn, 1, h, w}, std::move(masks));
  if (opts.with_aux) batch.aux = Tensor<float>({bn, 3, h, w}, std::move(aux));
  return batch;
}

GroupSplit split_groups(const DatasetManifest& manifest, double train_fraction, uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must be in [0, 1]");
  }
  std::vector<int64_t> ids;
  for (const auto& g : manifest.groups) ids.push_back(g.id);
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));
  GroupSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

GroupCache::GroupCache(std::filesystem::path root, DatasetManifest manifest, bool with_aux)
    : root_(std::move(root)), manifest_(std::move(manifest)), with_aux_(with_aux) {}

const GroupCache::Entry& GroupCache::fetch(int64_t id) {
  auto it = entries_.find(id);
  if (it != entries_.end()) return it->second;
  LoadOptions opts;
  opts.with_aux = with_aux_;
  GroupBatch b = load_batch(root_, manifest_, {id}, opts);
  Entry e;
  e.height = static_cast<int>(b.images.dim(2));
  e.width = static_cast<int>(b.images.dim(3));
  e.class_id = static_cast<int>(b.labels[0]);
  e.images.assign(b.images.data().begin(), b.images.data().end());
  e.masks.assign(b.masks.data().begin(), b.masks.data().end());
  if (with_aux_) e.aux.assign(b.aux.data().begin(), b.aux.data().end());
  return entries_.emplace(id, std::move(e)).first->second;
}

GroupBatch GroupCache::batch(const std::vector<int64_t>& group_ids, bool hflip) {
  if (group_ids.empty()) throw UsageError("batch needs at least one group id");
  const int n = manifest_.group_size;
  const Entry& first = fetch(group_ids.front());
  const int h = first.height, w = first.width;
  const int64_t bn = static_cast<int64_t>(group_ids.size()) * n;
  std::vector<float> images, masks, aux;
  images.reserve(static_cast<std::size_t>(bn) * 3 * h * w);
  masks.reserve(static_cast<std::size_t>(bn) * h * w);
  GroupBatch out;
  out.group_size = n;
  for (int64_t id : group_ids) {
    const Entry& e = fetch(id);
    if (e.height != h || e.width != w) throw ShapeError("group " + std::to_string(id) + " has a different image size");
    images.insert(images.end(), e.images.begin(), e.images.end());
    masks.insert(masks.end(), e.masks.begin(), e.masks.end());
    if (with_aux_) aux.insert(aux.end(), e.aux.begin(), e.aux.end());
    out.labels.push_back(e.class_id);
    out.group_ids.push_back(id);
  }
  if (hflip) {
    mirror_planar(images, static_cast<int>(bn * 3), h, w);
    mirror_planar(masks, static_cast<int>(bn), h, w);
    if (with_aux_) mirror_planar(aux, static_cast<int>(bn * 3), h, w);
  }
  out.images = Tensor<float>({bn, 3, h, w}, std::move(images));
  out.masks = Tensor<float>({bn, 1, h, w}, std::move(masks));
  if (with_aux_) out.aux = Tensor<float>({bn, 3, h, w}, std::move(aux));
  return out;
}

}  // namespace ufo
