#include "loss/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
Tensor<T> loss_cls(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("loss_cls expects (M,classes) logits, got " + shape_str(logits.shape()));
  const int64_t m = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != m) {
    throw ShapeError("loss_cls: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0," +
                      std::to_string(k) + ")");
    }
  }
  std::vector<T> prob(static_cast<std::size_t>(m * k));
  T total = 0;
  for (int64_t r = 0; r < m; ++r) {
    const T* row = logits.ptr() + r * k;
    const T mx = *std::max_element(row, row + k);
    T sum = 0;
    for (int64_t c = 0; c < k; ++c) {
      prob[r * k + c] = std::exp(row[c] - mx);
      sum += prob[r * k + c];
    }
    for (int64_t c = 0; c < k; ++c) prob[r * k + c] /= sum;
    total += -(row[labels[r]] - mx - std::log(sum));
  }
  Tensor<T> out(Shape{1}, total / static_cast<T>(m), tape.needs_grad({&logits}));
  if (out.requires_grad()) {
    tape.record("loss_cls", out, [logits, out, labels, prob = std::move(prob), m, k]() {
      const T g = out.grad()[0] / static_cast<T>(m);
      auto gl = logits.grad();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < k; ++c)
          gl[r * k + c] += g * (prob[r * k + c] - (c == labels[r] ? T(1) : T(0)));
    });
  }
  return out;
}

namespace {

template <typename T>
void check_mask_pair(const char* who, const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape() || pred.rank() != 4) {
    throw ShapeError(std::string(who) + ": prediction " + shape_str(pred.shape()) + " and ground truth " +
                     shape_str(gt.shape()) + " must be equal (M,1,H,W) shapes");
  }
}

}  // namespace

template <typename T>
Tensor<T> loss_wbce(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt, const WbceOptions& opts,
                    int64_t* clamped) {
  check_mask_pair("loss_wbce", pred, gt);
  const int64_t m = pred.dim(0), hw = pred.numel() / m;
  const T lo = static_cast<T>(opts.clamp_eps), hi = T(1) - static_cast<T>(opts.clamp_eps);
  std::vector<T> wpos(static_cast<std::size_t>(m)), wneg(static_cast<std::size_t>(m));
  int64_t nclamped = 0;
  T total = 0;
  for (int64_t i = 0; i < m; ++i) {
    const T* p = pred.ptr() + i * hw;
    const T* g = gt.ptr() + i * hw;
    T pos = 0;
    for (int64_t j = 0; j < hw; ++j) pos += g[j];
    const T gamma = pos / static_cast<T>(hw);
    wpos[i] = opts.swap_gamma ? T(1) - gamma : gamma;
    wneg[i] = opts.swap_gamma ? gamma : T(1) - gamma;
    T s = 0;
    for (int64_t j = 0; j < hw; ++j) {
      T pv = p[j];
      if (pv < lo || pv > hi) {
        ++nclamped;
        pv = std::clamp(pv, lo, hi);
      }
      s += wpos[i] * g[j] * std::log(pv) + wneg[i] * (T(1) - g[j]) * std::log(T(1) - pv);
    }
    total += -s / static_cast<T>(hw);
  }
  if (clamped != nullptr) *clamped = nclamped;
  Tensor<T> out(Shape{1}, total / static_cast<T>(m), tape.needs_grad({&pred}));
  if (out.requires_grad()) {
    tape.record("loss_wbce", out, [pred, gt, out, wpos = std::move(wpos), wneg = std::move(wneg), m, hw, lo, hi]() {
      const T scale = out.grad()[0] / static_cast<T>(m * hw);
      auto gp = pred.grad();
      for (int64_t i = 0; i < m; ++i) {
        const T* p = pred.ptr() + i * hw;
        const T* g = gt.ptr() + i * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const T pv = p[j];
          if (pv < lo || pv > hi) continue;  // clamped: locally constant
          gp[i * hw + j] += -scale * (wpos[i] * g[j] / pv - wneg[i] * (T(1) - g[j]) / (T(1) - pv));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> loss_iou(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt) {
  check_mask_pair("loss_iou", pred, gt);
  const int64_t m = pred.dim(0), hw = pred.numel() / m;
  std::vector<T> inter(static_cast<std::size_t>(m)), uni(static_cast<std::size_t>(m));
  T total = 0;
  for (int64_t i = 0; i < m; ++i) {
    const T* p = pred.ptr() + i * hw;
    const T* g = gt.ptr() + i * hw;
    T a = 0, u = 0;
    for (int64_t j = 0; j < hw; ++j) {
      a += p[j] * g[j];
      u += p[j] + g[j] - p[j] * g[j];
    }
    inter[i] = a;
    uni[i] = u;
    if (u > T(0)) total += T(1) - a / u;
  }
  Tensor<T> out(Shape{1}, total / static_cast<T>(m), tape.needs_grad({&pred}));
  if (out.requires_grad()) {
    tape.record("loss_iou", out, [pred, gt, out, inter = std::move(inter), uni = std::move(uni), m, hw]() {
      const T go = out.grad()[0] / static_cast<T>(m);
      auto gp = pred.grad();
      for (int64_t i = 0; i < m; ++i) {
        if (!(uni[i] > T(0))) continue;
        const T* g = gt.ptr() + i * hw;
        const T u2 = uni[i] * uni[i];
        for (int64_t j = 0; j < hw; ++j) {
          // d(1 − I/U)/dp = −(g·U − I·(1 − g)) / U²
          gp[i * hw + j] += -go * (g[j] * uni[i] - inter[i] * (T(1) - g[j])) / u2;
        }
      }
    });
  }
  return out;
}

template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const Tensor<T>& cls, const Tensor<T>& wbce, const Tensor<T>& iou) {
  TotalLoss<T> r;
  r.total = cls.defined() ? ops::add(tape, ops::add(tape, cls, wbce), iou) : ops::add(tape, wbce, iou);
  r.breakdown.cls = cls.defined() ? static_cast<double>(cls.item()) : 0.0;
  r.breakdown.wbce = static_cast<double>(wbce.item());
  r.breakdown.iou = static_cast<double>(iou.item());
  r.breakdown.total = static_cast<double>(r.total.item());
  return r;
}

#define UFO_INSTANTIATE_LOSSES(T)                                                                      \
  template Tensor<T> loss_cls(Tape<T>&, const Tensor<T>&, const std::vector<int64_t>&);                \
  template Tensor<T> loss_wbce(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const WbceOptions&, int64_t*); \
  template Tensor<T> loss_iou(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template TotalLoss<T> total_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

UFO_INSTANTIATE_LOSSES(float)
UFO_INSTANTIATE_LOSSES(double)

#undef UFO_INSTANTIATE_LOSSES

}  // namespace ufo
