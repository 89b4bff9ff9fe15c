#include "loss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "common/error.hpp"

namespace ufo {

double f_measure(double precision, double recall) {
  const double den = kFBetaSquared * precision + recall;
  if (den <= 0) return 0.0;
  return (1.0 + kFBetaSquared) * precision * recall / den;
}

namespace {

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
};

double precision_of(const Counts& c) {
  if (c.tp + c.fp == 0) return c.tp + c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall_of(const Counts& c) {
  if (c.tp + c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

void check_sizes(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw ShapeError("metrics: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                     std::to_string(gt.size()));
  }
}

// Number of thresholds i/255 (i = 0..255) that v reaches.
int thresholds_reached(double v) {
  int n = static_cast<int>(std::floor(v * (kCurveThresholds - 1))) + 1;
  n = std::clamp(n, 0, kCurveThresholds);
  while (n > 0 && static_cast<double>(n - 1) / (kCurveThresholds - 1) > v) --n;
  while (n < kCurveThresholds && static_cast<double>(n) / (kCurveThresholds - 1) <= v) ++n;
  return n;
}

}  // namespace

ImageMetrics image_metrics(std::span<const float> pred, std::span<const float> gt) {
  check_sizes(pred, gt);
  Counts c;
  double abs_err = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= kBinarizeThreshold;
    const bool g = gt[i] >= 0.5f;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
    abs_err += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
  }
  ImageMetrics m;
  m.precision = precision_of(c);
  const int64_t uni = c.tp + c.fp + c.fn;
  m.jaccard = uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
  m.mae = abs_err / static_cast<double>(pred.size());
  m.f_beta = f_measure(m.precision, recall_of(c));
  return m;
}

void MetricAccumulator::add(std::span<const float> pred, std::span<const float> gt, int64_t group, int64_t image) {
  auto m = image_metrics(pred, gt);
  m.group = group;
  m.image = image;
  per_image_.push_back(m);
  // hist[n] counts pixels that reach exactly the first n thresholds.
  std::vector<int64_t> pos(kCurveThresholds + 1, 0), neg(kCurveThresholds + 1, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int n = thresholds_reached(pred[i]);
    (gt[i] >= 0.5f ? pos : neg)[static_cast<std::size_t>(n)] += 1;
  }
  int64_t total_pos = 0;
  for (auto v : pos) total_pos += v;
  // Pixels predicted positive at threshold i are those reaching more than i thresholds.
  int64_t tp = 0, fp = 0;
  for (int i = kCurveThresholds - 1; i >= 0; --i) {
    tp += pos[static_cast<std::size_t>(i) + 1];
    fp += neg[static_cast<std::size_t>(i) + 1];
    Counts c{tp, fp, total_pos - tp};
    prec_sum_[static_cast<std::size_t>(i)] += precision_of(c);
    rec_sum_[static_cast<std::size_t>(i)] += recall_of(c);
  }
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.per_image = per_image_;
  const double n = static_cast<double>(per_image_.size());
  if (per_image_.empty()) return r;
  for (const auto& m : per_image_) {
    r.mean.precision += m.precision;
    r.mean.jaccard += m.jaccard;
    r.mean.mae += m.mae;
    r.mean.f_beta += m.f_beta;
  }
  r.mean.precision /= n;
  r.mean.jaccard /= n;
  r.mean.mae /= n;
  r.mean.f_beta /= n;
  r.curve.resize(kCurveThresholds);
  for (int i = 0; i < kCurveThresholds; ++i) {
    auto& p = r.curve[static_cast<std::size_t>(i)];
    p.threshold = static_cast<double>(i) / (kCurveThresholds - 1);
    p.precision = prec_sum_[static_cast<std::size_t>(i)] / n;
    p.recall = rec_sum_[static_cast<std::size_t>(i)] / n;
    p.f = f_measure(p.precision, p.recall);
    r.max_f = std::max(r.max_f, p.f);
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["num_images"] = per_image.size();
  j["mean"] = {{"precision", mean.precision}, {"jaccard", mean.jaccard}, {"mae", mean.mae}, {"f_beta", mean.f_beta}};
  j["max_f"] = max_f;
  j["f_beta_squared"] = kFBetaSquared;
  auto& imgs = j["per_image"] = nlohmann::json::array();
  for (const auto& m : per_image) {
    imgs.push_back({{"group", m.group},
                    {"image", m.image},
                    {"precision", m.precision},
                    {"jaccard", m.jaccard},
                    {"mae", m.mae},
                    {"f_beta", m.f_beta}});
  }
  auto& pr = j["pr_curve"] = nlohmann::json::array();
  auto& fc = j["f_curve"] = nlohmann::json::array();
  for (const auto& p : curve) {
    pr.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
    fc.push_back({{"threshold", p.threshold}, {"f", p.f}});
  }
  return j;
}

std::string MetricReport::curve_csv() const {
  std::ostringstream os;
  os << "threshold,precision,recall,f\n" << std::setprecision(10);
  for (const auto& p : curve) os << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f << '\n';
  return os.str();
}

}  // namespace ufo
