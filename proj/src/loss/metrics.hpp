#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ufo {

inline constexpr double kFBetaSquared = 0.3;
inline constexpr int kCurveThresholds = 256;
inline constexpr double kBinarizeThreshold = 0.5;

struct ImageMetrics {
  int64_t group = -1;
  int64_t image = -1;
  double precision = 0;
  double jaccard = 0;
  double mae = 0;
  double f_beta = 0;
};

struct CurvePoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
  double f = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;
  std::vector<CurvePoint> curve;  // kCurveThresholds points, thresholds i/255
  double max_f = 0;

  nlohmann::json to_json() const;
  // Columns: threshold,precision,recall,f
  std::string curve_csv() const;
};

// F-measure with β² = 0.3; 0 when precision and recall are both 0.
double f_measure(double precision, double recall);

// Precision/Jaccard/F at the 0.5 binarization (pred >= 0.5) and soft MAE.
// Empty prediction: precision 1 if the mask is empty too, else 0. Empty
// union: Jaccard 1. Empty mask: recall 1.
ImageMetrics image_metrics(std::span<const float> pred, std::span<const float> gt);

// Per-image metrics and threshold sweeps, folded in insertion order.
class MetricAccumulator {
 public:
  void add(std::span<const float> pred, std::span<const float> gt, int64_t group = -1, int64_t image = -1);
  MetricReport report() const;
  std::size_t count() const { return per_image_.size(); }

 private:
  std::vector<ImageMetrics> per_image_;
  std::vector<double> prec_sum_ = std::vector<double>(kCurveThresholds, 0.0);
  std::vector<double> rec_sum_ = std::vector<double>(kCurveThresholds, 0.0);
};

}  // namespace ufo
