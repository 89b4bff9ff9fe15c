#include "app/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "common/error.hpp"
#include "data/netpbm.hpp"

namespace ufo {

EvalSplit parse_eval_split(const std::string& name) {
  if (name == "train") return EvalSplit::kTrain;
  if (name == "val") return EvalSplit::kVal;
  if (name == "all") return EvalSplit::kAll;
  throw UsageError("split must be train, val or all, got '" + name + "'");
}

std::vector<int64_t> split_ids(const RunConfig& cfg, const DatasetManifest& manifest, EvalSplit split) {
  if (split == EvalSplit::kAll) {
    std::vector<int64_t> ids;
    for (const auto& g : manifest.groups) ids.push_back(g.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  auto s = split_groups(manifest, cfg.data.train_fraction, cfg.data.split_seed);
  return split == EvalSplit::kTrain ? s.train : s.val;
}

MetricReport evaluate_groups(const UfoNet<float>& net, const std::filesystem::path& data_root,
                             const DatasetManifest& manifest, const std::vector<int64_t>& ids, bool with_aux) {
  MetricAccumulator acc;
  LoadOptions lopts;
  lopts.with_aux = with_aux;
  for (int64_t id : ids) {
    const GroupBatch b = load_batch(data_root, manifest, {id}, lopts);
    Tape<float> off(false);
    const auto out = net.forward(off, b.images, b.group_size, with_aux ? &b.aux : nullptr);
    const int64_t plane = b.masks.numel() / b.group_size;
    for (int n = 0; n < b.group_size; ++n) {
      acc.add(out.probs.data().subspan(n * plane, plane), b.masks.data().subspan(n * plane, plane), id, n);
    }
  }
  return acc.report();
}

MetricReport evaluate_oracle(const std::filesystem::path& data_root, const DatasetManifest& manifest,
                             const std::vector<int64_t>& ids) {
  MetricAccumulator acc;
  for (int64_t id : ids) {
    const GroupBatch b = load_batch(data_root, manifest, {id});
    const int64_t plane = b.masks.numel() / b.group_size;
    for (int n = 0; n < b.group_size; ++n) {
      const auto m = b.masks.data().subspan(n * plane, plane);
      acc.add(m, m, id, n);
    }
  }
  return acc.report();
}

void write_report(const MetricReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw IoError("cannot write " + (out_dir / "report.json").string());
    out << report.to_json().dump(2) << '\n';
  }
  std::ofstream csv(out_dir / "curves.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "curves.csv").string());
  csv << report.curve_csv();
}

std::vector<std::filesystem::path> infer_group(const UfoNet<float>& net, const std::filesystem::path& group_dir,
                                               const std::filesystem::path& out_dir,
                                               const std::optional<std::filesystem::path>& aux_dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> inputs;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(group_dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") inputs.push_back(e.path());
  }
  if (ec) throw IoError("cannot read " + group_dir.string() + ": " + ec.message());
  if (inputs.empty()) throw IoError("no .ppm images in " + group_dir.string());
  std::sort(inputs.begin(), inputs.end());

  const auto n = static_cast<int64_t>(inputs.size());
  int h = 0, w = 0;
  std::vector<float> pixels, aux;
  auto append = [&](const fs::path& p, std::vector<float>& dst) {
    const Image8 img = read_netpbm(p);
    if (img.channels != 3) throw DataError(p.string() + ": expected an RGB (P6) image");
    if (img.height != h || img.width != w) {
      throw ShapeError(p.string() + ": size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       " differs from the group's " + std::to_string(w) + "x" + std::to_string(h));
    }
    const std::size_t base = dst.size();
    dst.resize(base + static_cast<std::size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < h * w; ++i) dst[base + static_cast<std::size_t>(c) * h * w + i] = normalize_pixel(img.pixels[i * 3 + c]);
  };
  {
    const Image8 first = read_netpbm(inputs.front());
    h = first.height;
    w = first.width;
  }
  for (const auto& p : inputs) append(p, pixels);
  Tensor<float> images({n, 3, h, w}, std::move(pixels));
  Tensor<float> aux_t;
  if (aux_dir) {
    for (const auto& p : inputs) append(*aux_dir / p.filename(), aux);
    aux_t = Tensor<float>({n, 3, h, w}, std::move(aux));
  }

  Tape<float> off(false);
  const auto out = net.forward(off, images, n, aux_dir ? &aux_t : nullptr);
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  const auto probs = out.probs.data();
  for (int64_t k = 0; k < n; ++k) {
    Image8 mask{w, h, 1, std::vector<uint8_t>(static_cast<std::size_t>(h) * w)};
    for (int i = 0; i < h * w; ++i) {
      const double p = std::clamp(static_cast<double>(probs[k * h * w + i]), 0.0, 1.0);
      mask.pixels[i] = static_cast<uint8_t>(std::lround(p * 255.0));
    }
    const auto path = out_dir / (inputs[static_cast<std::size_t>(k)].stem().string() + ".pgm");
    write_pgm(path, mask);
    written.push_back(path);
  }
  return written;
}

}  // namespace ufo
