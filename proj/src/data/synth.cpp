#include "data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "common/error.hpp"
#include "data/netpbm.hpp"
#include "model/params.hpp"

namespace ufo {

ShapeKind shape_kind_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kShapeVocabulary.size(); ++i) {
    if (name == kShapeVocabulary[i]) return static_cast<ShapeKind>(i);
  }
  throw ConfigError("unknown shape class '" + name + "'");
}

namespace {

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

bool in_triangle(const ShapeInstance& s, double x, double y) {
  double vx[3], vy[3];
  for (int i = 0; i < 3; ++i) {
    const double a = -std::numbers::pi / 2 + i * 2 * std::numbers::pi / 3;
    vx[i] = s.cx + s.radius * std::cos(a);
    vy[i] = s.cy + s.radius * std::sin(a);
  }
  bool neg = false, pos = false;
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3;
    const double c = cross2(vx[j] - vx[i], vy[j] - vy[i], x - vx[i], y - vy[i]);
    neg |= c < 0;
    pos |= c > 0;
  }
  return !(neg && pos);
}

}  // namespace

bool shape_contains(const ShapeInstance& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double r = s.radius;
  switch (s.kind) {
    case ShapeKind::kDisk:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare: {
      const double half = r / std::numbers::sqrt2;
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    case ShapeKind::kTriangle:
      return in_triangle(s, x, y);
    case ShapeKind::kCross: {
      // Plus sign whose arm tips touch the circumcircle; arm half-width r/3.
      const double arm = r / 3.0;
      const double reach = std::sqrt(r * r - arm * arm);
      return (std::abs(dx) <= reach && std::abs(dy) <= arm) || (std::abs(dx) <= arm && std::abs(dy) <= reach);
    }
    case ShapeKind::kRing: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
  }
  return false;
}

std::vector<uint8_t> rasterize(const ShapeInstance& s, int height, int width) {
  std::vector<uint8_t> m(static_cast<std::size_t>(height) * width, 0);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) m[static_cast<std::size_t>(i) * width + j] = shape_contains(s, j + 0.5, i + 0.5);
  return m;
}

void SynthConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("synth height and width must be positive multiples of 16, got " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  if (classes.size() < 2) throw ConfigError("synth needs at least 2 classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    shape_kind_from_name(classes[i]);
    for (std::size_t j = 0; j < i; ++j)
      if (classes[i] == classes[j]) throw ConfigError("duplicate synth class '" + classes[i] + "'");
  }
  if (group_size < 1) throw ConfigError("synth group_size must be >= 1");
  if (groups_per_class < 1) throw ConfigError("synth groups_per_class must be >= 1");
  if (min_distractors < 0 || max_distractors < min_distractors) {
    throw ConfigError("synth distractor range must satisfy 0 <= min <= max");
  }
  if (!(min_radius >= 2.0) || max_radius < min_radius) throw ConfigError("synth radius range invalid");
  if (2 * max_radius + 2 > std::min(height, width)) throw ConfigError("synth max_radius too large for the canvas");
  if (hue_jitter < 0 || hue_jitter > 0.5) throw ConfigError("synth hue_jitter must be in [0, 0.5]");
  if (distractor_hue_gap < 0 || distractor_hue_gap > 0.5) {
    throw ConfigError("synth distractor_hue_gap must be in [0, 0.5]");
  }
  if (noise < 0 || noise > 0.5) throw ConfigError("synth noise must be in [0, 0.5]");
  if (max_attempts < 1) throw ConfigError("synth max_attempts must be >= 1");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"height", height},
          {"width", width},
          {"classes", classes},
          {"group_size", group_size},
          {"groups_per_class", groups_per_class},
          {"min_distractors", min_distractors},
          {"max_distractors", max_distractors},
          {"min_radius", min_radius},
          {"max_radius", max_radius},
          {"hue_jitter", hue_jitter},
          {"distractor_hue_gap", distractor_hue_gap},
          {"noise", noise},
          {"aux", aux},
          {"max_attempts", max_attempts}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  SynthConfig c;
  const auto defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown synth config key '" + key + "'");
  }
  try {
    c.seed = j.value("seed", c.seed);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.classes = j.value("classes", c.classes);
    c.group_size = j.value("group_size", c.group_size);
    c.groups_per_class = j.value("groups_per_class", c.groups_per_class);
    c.min_distractors = j.value("min_distractors", c.min_distractors);
    c.max_distractors = j.value("max_distractors", c.max_distractors);
    c.min_radius = j.value("min_radius", c.min_radius);
    c.max_radius = j.value("max_radius", c.max_radius);
    c.hue_jitter = j.value("hue_jitter", c.hue_jitter);
    c.distractor_hue_gap = j.value("distractor_hue_gap", c.distractor_hue_gap);
    c.noise = j.value("noise", c.noise);
    c.aux = j.value("aux", c.aux);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(uint64_t seed) : engine(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_uniform(engine); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(unit_uniform(engine) * (hi - lo + 1));
  }
};

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double hue_distance(double a, double b) {
  double d = std::abs(a - b);
  d -= std::floor(d);
  return std::min(d, 1.0 - d);
}

uint8_t quantize(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct Placed {
  ShapeInstance shape;
  Rgb color;
};

std::string group_stem(int64_t gid, int n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "g%04lld_%d", static_cast<long long>(gid), n);
  return buf;
}

}  // namespace

DatasetManifest synthesize(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                           std::vector<std::vector<ShapeInstance>>* layouts) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "masks"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  if (cfg.aux) {
    fs::create_directories(out_dir / "aux", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "aux").string() + ": " + ec.message());
  }

  const int num_classes = static_cast<int>(cfg.classes.size());
  const int64_t num_groups = static_cast<int64_t>(num_classes) * cfg.groups_per_class;
  const int h = cfg.height, w = cfg.width;

  DatasetManifest manifest;
  manifest.classes = cfg.classes;
  manifest.group_size = cfg.group_size;

  for (int64_t gid = 0; gid < num_groups; ++gid) {
    const int cls = static_cast<int>(gid % num_classes);
    Rng rng(splitmix64(cfg.seed ^ splitmix64(static_cast<uint64_t>(gid) + 1)));
    const double group_hue = rng.uniform(0.0, 1.0);
    GroupRecord rec;
    rec.id = gid;
    rec.class_id = cls;
    for (int n = 0; n < cfg.group_size; ++n) {
      // Co-object first, then distractors of other classes; no two shapes'
      // circumcircles may overlap (1px margin).
      std::vector<Placed> placed;
      const int distractors = rng.integer(cfg.min_distractors, cfg.max_distractors);
      for (int s = 0; s <= distractors; ++s) {
        Placed p;
        if (s == 0) {
          p.shape.kind = shape_kind_from_name(cfg.classes[static_cast<std::size_t>(cls)]);
          const double hue = group_hue + rng.uniform(-cfg.hue_jitter, cfg.hue_jitter);
          p.color = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0));
        } else {
          int other = rng.integer(0, num_classes - 2);
          if (other >= cls) ++other;
          p.shape.kind = shape_kind_from_name(cfg.classes[static_cast<std::size_t>(other)]);
          double hue = rng.uniform(0.0, 1.0);
          for (int tries = 0; tries < 64 && hue_distance(hue, group_hue) < cfg.distractor_hue_gap; ++tries) {
            hue = rng.uniform(0.0, 1.0);
          }
          p.color = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0));
        }
        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
          p.shape.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
          p.shape.cx = rng.uniform(p.shape.radius + 1, w - p.shape.radius - 1);
          p.shape.cy = rng.uniform(p.shape.radius + 1, h - p.shape.radius - 1);
          ok = true;
          for (const auto& q : placed) {
            const double dx = q.shape.cx - p.shape.cx, dy = q.shape.cy - p.shape.cy;
            const double min_d = q.shape.radius + p.shape.radius + 1;
            if (dx * dx + dy * dy < min_d * min_d) {
              ok = false;
              break;
            }
          }
        }
        if (!ok) {
          throw GenerationError("group " + std::to_string(gid) + ": could not place shape " + std::to_string(s) +
                                " of image " + std::to_string(n) + " after " + std::to_string(cfg.max_attempts) +
                                " attempts");
        }
        placed.push_back(p);
      }

      const Rgb bg = hsv_to_rgb(rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.3), rng.uniform(0.15, 0.45));
      Image8 img{w, h, 3, std::vector<uint8_t>(static_cast<std::size_t>(w) * h * 3)};
      Image8 mask{w, h, 1, std::vector<uint8_t>(static_cast<std::size_t>(w) * h, 0)};
      Image8 aux{w, h, 3, std::vector<uint8_t>(static_cast<std::size_t>(w) * h * 3)};
      std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
      for (std::size_t s = 0; s < placed.size(); ++s) {
        const auto r = rasterize(placed[s].shape, h, w);
        for (std::size_t i = 0; i < r.size(); ++i)
          if (r[i]) owner[i] = static_cast<int>(s);
      }
      int64_t positives = 0;
      for (int i = 0; i < h * w; ++i) {
        const Rgb c = owner[i] < 0 ? bg : placed[static_cast<std::size_t>(owner[i])].color;
        img.pixels[i * 3 + 0] = quantize(c.r + rng.uniform(-cfg.noise, cfg.noise));
        img.pixels[i * 3 + 1] = quantize(c.g + rng.uniform(-cfg.noise, cfg.noise));
        img.pixels[i * 3 + 2] = quantize(c.b + rng.uniform(-cfg.noise, cfg.noise));
        const bool co = owner[i] == 0;
        mask.pixels[i] = co ? 255 : 0;
        positives += co;
        if (cfg.aux) {
          const double a = (co ? 0.85 : 0.1) + rng.uniform(-cfg.noise, cfg.noise);
          aux.pixels[i * 3 + 0] = aux.pixels[i * 3 + 1] = aux.pixels[i * 3 + 2] = quantize(a);
        }
      }
      if (positives == 0) {
        throw GenerationError("group " + std::to_string(gid) + ": image " + std::to_string(n) +
                              " has an empty co-object mask");
      }
      if (layouts != nullptr) {
        auto& shapes = layouts->emplace_back();
        for (const auto& p : placed) shapes.push_back(p.shape);
      }
      const std::string stem = group_stem(gid, n);
      const std::string ip = "images/" + stem + ".ppm";
      const std::string mp = "masks/" + stem + ".pgm";
      write_ppm(out_dir / ip, img);
      write_pgm(out_dir / mp, mask);
      rec.images.push_back(ip);
      rec.masks.push_back(mp);
      if (cfg.aux) {
        const std::string ap = "aux/" + stem + ".ppm";
        write_ppm(out_dir / ap, aux);
        rec.aux.push_back(ap);
      }
    }
    manifest.groups.push_back(std::move(rec));
  }
  save_manifest(manifest, out_dir);
  return manifest;
}

}  // namespace ufo
