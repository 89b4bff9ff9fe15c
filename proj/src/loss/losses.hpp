#pragma once

#include <cstdint>
#include <vector>

#include "tensor/tensor.hpp"

namespace ufo {

// Mean over images of −log softmax(logits)[label], via log-sum-exp.
// logits: (M, classes); labels.size() == M.
template <typename T>
Tensor<T> loss_cls(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int64_t>& labels);

struct WbceOptions {
  // false: positives weighted by γ (fraction of positive pixels), negatives by
  // 1 − γ. true: the swapped weighting, positives by 1 − γ.
  bool swap_gamma = false;
  double clamp_eps = 1e-7;
};

// Weighted BCE per image, averaged over images. pred and gt: (M, 1, H, W).
// Predictions are clamped to [eps, 1 − eps]; the number of clamped pixels is
// written to *clamped when given.
template <typename T>
Tensor<T> loss_wbce(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt, const WbceOptions& opts = {},
                    int64_t* clamped = nullptr);

// Soft IoU loss 1 − ΣPG / Σ(P + G − PG) per image, averaged. An image whose
// union is empty contributes 0.
template <typename T>
Tensor<T> loss_iou(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt);

struct LossBreakdown {
  double cls = 0;
  double wbce = 0;
  double iou = 0;
  double total = 0;
};

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

// Unweighted sum. An undefined `cls` (frozen classifier) is left out and
// reported as 0.
template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const Tensor<T>& cls, const Tensor<T>& wbce, const Tensor<T>& iou);

}  // namespace ufo
