#include "tensor/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "tensor/gemm.hpp"

namespace ufo {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("rank must be 1..4, got shape " + shape_str(shape));
  }
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("dims must be positive, got shape " + shape_str(shape));
  }
}

IndexTensor::IndexTensor(Shape s, std::vector<int64_t> values) : shape(std::move(s)), data(std::move(values)) {
  validate_shape(shape);
  if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("index data length does not match shape " + shape_str(shape));
  }
}

namespace testing {
namespace {
std::mutex& fault_mutex() {
  static std::mutex m;
  return m;
}
std::set<std::string, std::less<>>& fault_set() {
  static std::set<std::string, std::less<>> s;
  return s;
}
}  // namespace

void inject_backward_fault(std::string_view op) {
  std::lock_guard lock(fault_mutex());
  fault_set().emplace(op);
}
void clear_backward_faults() {
  std::lock_guard lock(fault_mutex());
  fault_set().clear();
}
bool backward_fault_active(std::string_view op) {
  std::lock_guard lock(fault_mutex());
  return fault_set().find(op) != fault_set().end();
}
}  // namespace testing

namespace ops {
namespace {

template <typename T>
T fault_sign(std::string_view op) {
  return testing::backward_fault_active(op) ? T(-1) : T(1);
}

template <typename T>
Tensor<T> make_output(const Tape<T>& tape, Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  return Tensor<T>(std::move(shape), T(0), tape.needs_grad(inputs));
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// Pads a shape to four dims with leading ones.
std::array<int64_t, 4> pad4(const Shape& s) {
  std::array<int64_t, 4> out{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) out[off + i] = s[i];
  return out;
}

std::array<int64_t, 4> contiguous_strides(const std::array<int64_t, 4>& dims) {
  std::array<int64_t, 4> st{};
  int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[i] = acc;
    acc *= dims[i];
  }
  return st;
}

struct BroadcastPlan {
  bool same = false;
  std::array<int64_t, 4> dims{};      // padded dims of a
  std::array<int64_t, 4> b_strides{};  // strides into b per padded dim of a
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.dims = pad4(a);
  if (a == b) {
    p.same = true;
    return p;
  }
  if (shape_numel(b) == 1) {
    p.b_strides = {0, 0, 0, 0};
    return p;
  }
  if (a.size() == 4 && b.size() == 1 && b[0] == a[1]) {
    p.b_strides = {0, 1, 0, 0};
    return p;
  }
  if (a.size() == b.size()) {
    bool ok = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (b[i] != a[i] && b[i] != 1) ok = false;
    }
    if (ok) {
      auto bd = pad4(b);
      auto bs = contiguous_strides(bd);
      for (int i = 0; i < 4; ++i) p.b_strides[i] = bd[i] == 1 ? 0 : bs[i];
      return p;
    }
  }
  throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

// Calls fn(a_index, b_index) over every element of a in row-major order.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  int64_t ai = 0;
  for (int64_t i0 = 0; i0 < p.dims[0]; ++i0) {
    for (int64_t i1 = 0; i1 < p.dims[1]; ++i1) {
      for (int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
        const int64_t base = i0 * p.b_strides[0] + i1 * p.b_strides[1] + i2 * p.b_strides[2];
        for (int64_t i3 = 0; i3 < p.dims[3]; ++i3, ++ai) fn(ai, base + i3 * p.b_strides[3]);
      }
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(Tape<T>& tape, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b, std::string_view name) {
  const auto plan = plan_broadcast(a.shape(), b.shape());
  auto out = make_output(tape, a.shape(), {&a, &b});
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const int64_t n = a.numel();
  if (plan.same) {
    switch (kind) {
      case BinaryKind::kAdd:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case BinaryKind::kSub:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case BinaryKind::kMul:
        for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
    }
  } else {
    for_each_broadcast(plan, [&](int64_t i, int64_t j) {
      switch (kind) {
        case BinaryKind::kAdd: po[i] = pa[i] + pb[j]; break;
        case BinaryKind::kSub: po[i] = pa[i] - pb[j]; break;
        case BinaryKind::kMul: po[i] = pa[i] * pb[j]; break;
      }
    });
  }
  if (out.requires_grad()) {
    tape.record(name, out, [a, b, out, plan, kind, name]() mutable {
      const T sign = fault_sign<T>(name);
      auto go = out.grad();
      const bool ga_on = wants_grad(a);
      const bool gb_on = wants_grad(b);
      T* ga = ga_on ? a.grad().data() : nullptr;
      T* gb = gb_on ? b.grad().data() : nullptr;
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      auto step = [&](int64_t i, int64_t j) {
        const T g = go[i] * sign;
        switch (kind) {
          case BinaryKind::kAdd:
            if (ga) ga[i] += g;
            if (gb) gb[j] += g;
            break;
          case BinaryKind::kSub:
            if (ga) ga[i] += g;
            if (gb) gb[j] -= g;
            break;
          case BinaryKind::kMul:
            if (ga) ga[i] += g * pb[j];
            if (gb) gb[j] += g * pa[i];
            break;
        }
      };
      if (plan.same) {
        for (int64_t i = 0; i < static_cast<int64_t>(go.size()); ++i) step(i, i);
      } else {
        for_each_broadcast(plan, step);
      }
    });
  }
  return out;
}

// Splits a shape around `axis` into (outer, len, inner).
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) r.outer *= s[i];
    else if (i == axis) r.len = s[i];
    else r.inner *= s[i];
  }
  return r;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("matmul needs equal ranks >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int r = a.rank();
  int64_t batch = 1;
  for (int i = 0; i < r - 2; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("matmul batch dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    batch *= a.dim(i);
  }
  const int64_t m = trans_a ? a.dim(r - 1) : a.dim(r - 2);
  const int64_t ka = trans_a ? a.dim(r - 2) : a.dim(r - 1);
  const int64_t kb = trans_b ? b.dim(r - 1) : b.dim(r - 2);
  const int64_t n = trans_b ? b.dim(r - 2) : b.dim(r - 1);
  if (ka != kb) {
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape os(a.shape().begin(), a.shape().end() - 2);
  os.push_back(m);
  os.push_back(n);
  auto out = make_output(tape, os, {&a, &b});
  const int64_t sa = m * ka, sb = ka * n, sc = m * n;
  for (int64_t i = 0; i < batch; ++i) {
    detail::gemm(trans_a, trans_b, m, n, ka, a.ptr() + i * sa, b.ptr() + i * sb, out.ptr() + i * sc, false);
  }
  if (out.requires_grad()) {
    tape.record("matmul", out, [a, b, out, batch, m, n, ka, sa, sb, sc, trans_a, trans_b]() mutable {
      const T sign = fault_sign<T>("matmul");
      std::vector<T> go(out.grad().begin(), out.grad().end());
      if (sign != T(1)) for (auto& g : go) g *= sign;
      for (int64_t i = 0; i < batch; ++i) {
        const T* gc = go.data() + i * sc;
        if (wants_grad(a)) {
          T* ga = a.grad().data() + i * sa;
          // dop(A) = dC·op(B)ᵀ
          if (!trans_a) detail::gemm(false, !trans_b, m, ka, n, gc, b.ptr() + i * sb, ga, true);
          else detail::gemm(trans_b, true, ka, m, n, b.ptr() + i * sb, gc, ga, true);
        }
        if (wants_grad(b)) {
          T* gb = b.grad().data() + i * sb;
          // dop(B) = op(A)ᵀ·dC
          if (!trans_b) detail::gemm(!trans_a, false, ka, n, m, a.ptr() + i * sa, gc, gb, true);
          else detail::gemm(true, trans_a, n, ka, m, gc, a.ptr() + i * sa, gb, true);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const int64_t in = weight.dim(0), outc = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outc)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const int64_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = outc;
  auto out = make_output(tape, os, {&x, &weight, &bias});
  detail::gemm(false, false, rows, outc, in, x.ptr(), weight.ptr(), out.ptr(), false);
  if (bias.defined()) {
    T* po = out.ptr();
    const T* pb = bias.ptr();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < outc; ++c) po[r * outc + c] += pb[c];
  }
  if (out.requires_grad()) {
    tape.record("linear", out, [x, weight, bias, out, rows, in, outc]() mutable {
      const T sign = fault_sign<T>("linear");
      std::vector<T> go(out.grad().begin(), out.grad().end());
      if (sign != T(1)) for (auto& g : go) g *= sign;
      if (wants_grad(x)) detail::gemm(false, true, rows, in, outc, go.data(), weight.ptr(), x.grad().data(), true);
      if (wants_grad(weight)) detail::gemm(true, false, in, outc, rows, x.ptr(), go.data(), weight.grad().data(), true);
      if (wants_grad(bias)) {
        T* gb = bias.grad().data();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < outc; ++c) gb[c] += go[r * outc + c];
      }
    });
  }
  return out;
}

namespace {

struct ConvGeom {
  int64_t n, c, h, w, o, kh, kw, oh, ow;
  int stride, pad;
  int64_t ckk() const { return c * kh * kw; }
  int64_t cols() const { return n * oh * ow; }
};

// col[(c,ki,kj), (n,y,x)] = x[n, c, y·s − p + ki, x·s − p + kj] (zero outside).
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  const int64_t ncols = g.cols();
  const int64_t ohw = g.oh * g.ow;
  for (int64_t ci = 0; ci < g.c; ++ci) {
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ci * g.kh + ki) * g.kw + kj) * ncols;
        for (int64_t ni = 0; ni < g.n; ++ni) {
          const T* src = x + (ni * g.c + ci) * g.h * g.w;
          T* dst = row + ni * ohw;
          for (int64_t y = 0; y < g.oh; ++y) {
            const int64_t iy = y * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst + y * g.ow, dst + (y + 1) * g.ow, T(0));
              continue;
            }
            for (int64_t xx = 0; xx < g.ow; ++xx) {
              const int64_t ix = xx * g.stride - g.pad + kj;
              dst[y * g.ow + xx] = (ix < 0 || ix >= g.w) ? T(0) : src[iy * g.w + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* col, T* dx) {
  const int64_t ncols = g.cols();
  const int64_t ohw = g.oh * g.ow;
  for (int64_t ci = 0; ci < g.c; ++ci) {
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * ncols;
        for (int64_t ni = 0; ni < g.n; ++ni) {
          T* dst = dx + (ni * g.c + ci) * g.h * g.w;
          const T* src = row + ni * ohw;
          for (int64_t y = 0; y < g.oh; ++y) {
            const int64_t iy = y * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            for (int64_t xx = 0; xx < g.ow; ++xx) {
              const int64_t ix = xx * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[y * g.ow + xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, stride, pad};
  const int64_t span_h = g.h + 2 * pad - g.kh;
  const int64_t span_w = g.w + 2 * pad - g.kw;
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                      shape_str(x.shape()));
  }
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw ConfigError("conv2d: output size not exact for input " + shape_str(x.shape()) + ", kernel " +
                      std::to_string(g.kh) + "x" + std::to_string(g.kw) + ", stride " + std::to_string(stride) +
                      ", pad " + std::to_string(pad));
  }
  g.oh = span_h / stride + 1;
  g.ow = span_w / stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.o) +
                     " output channels");
  }
  auto out = make_output(tape, Shape{g.n, g.o, g.oh, g.ow}, {&x, &weight, &bias});
  const int64_t ncols = g.cols(), ohw = g.oh * g.ow;
  std::vector<T> col(static_cast<std::size_t>(g.ckk() * ncols));
  im2col(g, x.ptr(), col.data());
  std::vector<T> tmp(static_cast<std::size_t>(g.o * ncols));
  detail::gemm(false, false, g.o, ncols, g.ckk(), weight.ptr(), col.data(), tmp.data(), false);
  T* po = out.ptr();
  for (int64_t ni = 0; ni < g.n; ++ni) {
    for (int64_t oi = 0; oi < g.o; ++oi) {
      const T b = bias.defined() ? bias.ptr()[oi] : T(0);
      const T* src = tmp.data() + oi * ncols + ni * ohw;
      T* dst = po + (ni * g.o + oi) * ohw;
      for (int64_t k = 0; k < ohw; ++k) dst[k] = src[k] + b;
    }
  }
  if (out.requires_grad()) {
    tape.record("conv2d", out, [x, weight, bias, out, g]() mutable {
      const T sign = fault_sign<T>("conv2d");
      const int64_t ncols = g.cols(), ohw = g.oh * g.ow;
      auto go = out.grad();
      std::vector<T> gt(static_cast<std::size_t>(g.o * ncols));
      for (int64_t ni = 0; ni < g.n; ++ni)
        for (int64_t oi = 0; oi < g.o; ++oi)
          for (int64_t k = 0; k < ohw; ++k) gt[oi * ncols + ni * ohw + k] = go[(ni * g.o + oi) * ohw + k];
      if (wants_grad(bias)) {
        T* gb = bias.grad().data();
        for (int64_t oi = 0; oi < g.o; ++oi) {
          T s = 0;
          for (int64_t k = 0; k < ncols; ++k) s += gt[oi * ncols + k];
          gb[oi] += s;
        }
      }
      if (wants_grad(weight)) {
        std::vector<T> col(static_cast<std::size_t>(g.ckk() * ncols));
        im2col(g, x.ptr(), col.data());
        detail::gemm(false, true, g.o, g.ckk(), ncols, gt.data(), col.data(), weight.grad().data(), true);
      }
      if (wants_grad(x)) {
        std::vector<T> dcol(static_cast<std::size_t>(g.ckk() * ncols));
        detail::gemm(true, false, g.ckk(), ncols, g.o, weight.ptr(), gt.data(), dcol.data(), false);
        if (sign != T(1)) for (auto& v : dcol) v *= sign;
        col2im_add(g, dcol.data(), x.grad().data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, BinaryKind::kAdd, a, b, "add");
}
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, BinaryKind::kSub, a, b, "sub");
}
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, BinaryKind::kMul, a, b, "mul");
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, x.shape(), {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  if (out.requires_grad()) {
    tape.record("relu", out, [x, out]() mutable {
      const T sign = fault_sign<T>("relu");
      auto go = out.grad();
      auto gx = x.grad();
      const T* px = x.ptr();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (px[i] > T(0)) gx[i] += sign * go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, x.shape(), {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = px[i];
    // Branches keep exp() from overflowing for large |v|.
    if (v >= T(0)) {
      po[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      po[i] = e / (T(1) + e);
    }
  }
  if (out.requires_grad()) {
    tape.record("sigmoid", out, [x, out]() mutable {
      const T sign = fault_sign<T>("sigmoid");
      auto go = out.grad();
      auto gx = x.grad();
      const T* py = out.ptr();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += sign * go[i] * py[i] * (T(1) - py[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x) {
  const T* px = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (!(px[i] > T(0))) {
      throw DomainError("log of non-positive value " + std::to_string(static_cast<double>(px[i])) + " at index " +
                        std::to_string(i));
    }
  }
  auto out = make_output(tape, x.shape(), {&x});
  T* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::log(px[i]);
  if (out.requires_grad()) {
    tape.record("log", out, [x, out]() mutable {
      const T sign = fault_sign<T>("log");
      auto go = out.grad();
      auto gx = x.grad();
      const T* px = x.ptr();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += sign * go[i] / px[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  auto out = make_output(tape, x.shape(), {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * factor;
  if (out.requires_grad()) {
    tape.record("scale", out, [x, out, factor]() mutable {
      const T sign = fault_sign<T>("scale");
      auto go = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += sign * go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank());
  const auto sp = split_axis(x.shape(), ax);
  auto out = make_output(tape, x.shape(), {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      T mx = px[base];
      for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, px[base + l * sp.inner]);
      T sum = 0;
      for (int64_t l = 0; l < sp.len; ++l) {
        const T e = std::exp(px[base + l * sp.inner] - mx);
        po[base + l * sp.inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int64_t l = 0; l < sp.len; ++l) po[base + l * sp.inner] *= inv;
    }
  }
  if (out.requires_grad()) {
    tape.record("softmax", out, [x, out, sp]() mutable {
      const T sign = fault_sign<T>("softmax");
      auto go = out.grad();
      auto gx = x.grad();
      const T* py = out.ptr();
      for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
          const int64_t base = o * sp.len * sp.inner + in;
          T dot = 0;
          for (int64_t l = 0; l < sp.len; ++l) dot += go[base + l * sp.inner] * py[base + l * sp.inner];
          for (int64_t l = 0; l < sp.len; ++l) {
            const int64_t i = base + l * sp.inner;
            gx[i] += sign * py[i] * (go[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce(Tape<T>& tape, Reduce kind, const Tensor<T>& x, std::optional<int> axis) {
  AxisSplit sp;
  Shape os;
  if (axis) {
    const int ax = normalize_axis(*axis, x.rank());
    sp = split_axis(x.shape(), ax);
    for (int i = 0; i < x.rank(); ++i)
      if (i != ax) os.push_back(x.dim(i));
    if (os.empty()) os.push_back(1);
  } else {
    sp.len = x.numel();
    os = {1};
  }
  auto out = make_output(tape, os, {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  std::vector<int64_t> argmax;
  if (kind == Reduce::kMax) argmax.resize(static_cast<std::size_t>(sp.outer * sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      const int64_t oi = o * sp.inner + in;
      if (kind == Reduce::kMax) {
        int64_t best = 0;
        for (int64_t l = 1; l < sp.len; ++l)
          if (px[base + l * sp.inner] > px[base + best * sp.inner]) best = l;
        argmax[oi] = best;
        po[oi] = px[base + best * sp.inner];
      } else {
        T s = 0;
        for (int64_t l = 0; l < sp.len; ++l) s += px[base + l * sp.inner];
        po[oi] = kind == Reduce::kMean ? s / static_cast<T>(sp.len) : s;
      }
    }
  }
  if (out.requires_grad()) {
    tape.record("reduce", out, [x, out, sp, kind, argmax = std::move(argmax)]() mutable {
      const T sign = fault_sign<T>("reduce");
      auto go = out.grad();
      auto gx = x.grad();
      const T mscale = kind == Reduce::kMean ? T(1) / static_cast<T>(sp.len) : T(1);
      for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
          const int64_t base = o * sp.len * sp.inner + in;
          const int64_t oi = o * sp.inner + in;
          const T g = sign * go[oi];
          if (kind == Reduce::kMax) {
            gx[base + argmax[oi] * sp.inner] += g;
          } else {
            for (int64_t l = 0; l < sp.len; ++l) gx[base + l * sp.inner] += g * mscale;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, const Shape& shape) {
  validate_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  auto out = make_output(tape, shape, {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (out.requires_grad()) {
    tape.record("reshape", out, [x, out]() mutable {
      const T sign = fault_sign<T>("reshape");
      auto go = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += sign * go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: perm length differs from rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) throw ShapeError("permute: not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape os(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) os[i] = x.dim(perm[i]);
  // Source strides aligned to output axes, padded to 4.
  Shape xs = x.shape();
  std::vector<int64_t> xstr(static_cast<std::size_t>(r));
  int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    xstr[i] = acc;
    acc *= xs[i];
  }
  std::array<int64_t, 4> dims{1, 1, 1, 1}, src{0, 0, 0, 0};
  for (int i = 0; i < r; ++i) {
    dims[4 - r + i] = os[i];
    src[4 - r + i] = xstr[perm[i]];
  }
  auto out = make_output(tape, os, {&x});
  auto walk = [dims, src](auto&& fn) {
    int64_t oi = 0;
    for (int64_t a = 0; a < dims[0]; ++a)
      for (int64_t b = 0; b < dims[1]; ++b)
        for (int64_t c = 0; c < dims[2]; ++c) {
          const int64_t base = a * src[0] + b * src[1] + c * src[2];
          for (int64_t d = 0; d < dims[3]; ++d, ++oi) fn(oi, base + d * src[3]);
        }
  };
  const T* px = x.ptr();
  T* po = out.ptr();
  walk([&](int64_t oi, int64_t si) { po[oi] = px[si]; });
  if (out.requires_grad()) {
    tape.record("permute", out, [x, out, walk]() mutable {
      const T sign = fault_sign<T>("permute");
      auto go = out.grad();
      auto gx = x.grad();
      walk([&](int64_t oi, int64_t si) { gx[si] += sign * go[oi]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_lastdim(Tape<T>& tape, const Tensor<T>& x, const IndexTensor& idx) {
  const int lead = static_cast<int>(idx.shape.size()) - 1;
  if (lead < 0 || x.rank() < lead + 1) {
    throw ShapeError("gather_lastdim: index " + shape_str(idx.shape) + " incompatible with " + shape_str(x.shape()));
  }
  int64_t outer = 1;
  for (int i = 0; i < lead; ++i) {
    if (x.dim(i) != idx.shape[static_cast<std::size_t>(i)]) {
      throw ShapeError("gather_lastdim: index " + shape_str(idx.shape) + " incompatible with " +
                       shape_str(x.shape()));
    }
    outer *= x.dim(i);
  }
  const int64_t q = x.dim(-1);
  const int64_t k = idx.shape.back();
  int64_t middle = 1;
  for (int i = lead; i < x.rank() - 1; ++i) middle *= x.dim(i);
  for (std::size_t i = 0; i < idx.data.size(); ++i) {
    if (idx.data[i] < 0 || idx.data[i] >= q) {
      throw IndexError("gather index " + std::to_string(idx.data[i]) + " at position " + std::to_string(i) +
                       " outside [0," + std::to_string(q) + ")");
    }
  }
  Shape os = x.shape();
  os.back() = k;
  auto out = make_output(tape, os, {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  const int64_t* pi = idx.data.data();
  for (int64_t a = 0; a < outer; ++a)
    for (int64_t m = 0; m < middle; ++m)
      for (int64_t j = 0; j < k; ++j) po[(a * middle + m) * k + j] = px[(a * middle + m) * q + pi[a * k + j]];
  if (out.requires_grad()) {
    tape.record("gather_lastdim", out, [x, out, idx, outer, middle, q, k]() mutable {
      const T sign = fault_sign<T>("gather_lastdim");
      auto go = out.grad();
      auto gx = x.grad();
      const int64_t* pi = idx.data.data();
      for (int64_t a = 0; a < outer; ++a)
        for (int64_t m = 0; m < middle; ++m)
          for (int64_t j = 0; j < k; ++j)
            gx[(a * middle + m) * q + pi[a * k + j]] += sign * go[(a * middle + m) * k + j];
    });
  }
  return out;
}

namespace {

struct Interp {
  std::vector<int64_t> lo, hi;
  std::vector<double> w_hi;  // weight of hi; lo gets 1 − w_hi
};

Interp interp_table(int64_t in, int factor) {
  const int64_t outn = in * factor;
  Interp t;
  t.lo.resize(outn);
  t.hi.resize(outn);
  t.w_hi.resize(outn);
  for (int64_t o = 0; o < outn; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    auto l = static_cast<int64_t>(src);
    if (l > in - 1) l = in - 1;
    t.lo[o] = l;
    t.hi[o] = l < in - 1 ? l + 1 : l;
    t.w_hi[o] = src - static_cast<double>(l);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& x, int factor) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear expects (N,C,H,W), got " + shape_str(x.shape()));
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  if (factor == 1) return reshape(tape, x, x.shape());
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  auto ty = interp_table(h, factor);
  auto tx = interp_table(w, factor);
  auto out = make_output(tape, Shape{x.dim(0), x.dim(1), oh, ow}, {&x});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = px + p * h * w;
    T* dst = po + p * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      const T wy = static_cast<T>(ty.w_hi[y]);
      const T* r0 = src + ty.lo[y] * w;
      const T* r1 = src + ty.hi[y] * w;
      for (int64_t xx = 0; xx < ow; ++xx) {
        const T wx = static_cast<T>(tx.w_hi[xx]);
        const T top = r0[tx.lo[xx]] * (T(1) - wx) + r0[tx.hi[xx]] * wx;
        const T bot = r1[tx.lo[xx]] * (T(1) - wx) + r1[tx.hi[xx]] * wx;
        dst[y * ow + xx] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  if (out.requires_grad()) {
    tape.record("upsample_bilinear", out, [x, out, ty, tx, planes, h, w, oh, ow]() mutable {
      const T sign = fault_sign<T>("upsample_bilinear");
      auto go = out.grad();
      auto gx = x.grad();
      for (int64_t p = 0; p < planes; ++p) {
        T* dst = gx.data() + p * h * w;
        const T* g = go.data() + p * oh * ow;
        for (int64_t y = 0; y < oh; ++y) {
          const T wy = static_cast<T>(ty.w_hi[y]);
          for (int64_t xx = 0; xx < ow; ++xx) {
            const T wx = static_cast<T>(tx.w_hi[xx]);
            const T gv = sign * g[y * ow + xx];
            dst[ty.lo[y] * w + tx.lo[xx]] += gv * (T(1) - wy) * (T(1) - wx);
            dst[ty.lo[y] * w + tx.hi[xx]] += gv * (T(1) - wy) * wx;
            dst[ty.hi[y] * w + tx.lo[xx]] += gv * wy * (T(1) - wx);
            dst[ty.hi[y] * w + tx.hi[xx]] += gv * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int64_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: affine params of size " + std::to_string(gamma.numel()) + " for input " +
                     shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / c;
  auto out = make_output(tape, x.shape(), {&x, &gamma, &beta});
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  const T* px = x.ptr();
  const T* pg = gamma.ptr();
  const T* pb = beta.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * c;
    T mean = 0;
    for (int64_t i = 0; i < c; ++i) mean += row[i];
    mean /= static_cast<T>(c);
    T var = 0;
    for (int64_t i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t i = 0; i < c; ++i) {
      const T xh = (row[i] - mean) * is;
      xhat[r * c + i] = xh;
      po[r * c + i] = xh * pg[i] + pb[i];
    }
  }
  if (out.requires_grad()) {
    tape.record("layer_norm", out,
                [x, gamma, beta, out, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                  const T sign = fault_sign<T>("layer_norm");
                  auto go = out.grad();
                  const T* pg = gamma.ptr();
                  T* gg = wants_grad(gamma) ? gamma.grad().data() : nullptr;
                  T* gb = wants_grad(beta) ? beta.grad().data() : nullptr;
                  T* gx = wants_grad(x) ? x.grad().data() : nullptr;
                  std::vector<T> dxh(static_cast<std::size_t>(c));
                  for (int64_t r = 0; r < rows; ++r) {
                    T m1 = 0, m2 = 0;
                    for (int64_t i = 0; i < c; ++i) {
                      const T g = sign * go[r * c + i];
                      if (gg) gg[i] += g * xhat[r * c + i];
                      if (gb) gb[i] += g;
                      dxh[i] = g * pg[i];
                      m1 += dxh[i];
                      m2 += dxh[i] * xhat[r * c + i];
                    }
                    if (!gx) continue;
                    m1 /= static_cast<T>(c);
                    m2 /= static_cast<T>(c);
                    for (int64_t i = 0; i < c; ++i) {
                      gx[r * c + i] += inv_std[r] * (dxh[i] - m1 - xhat[r * c + i] * m2);
                    }
                  }
                });
  }
  return out;
}

#define UFO_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool, bool);                      \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> log(Tape<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                                  \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&, int);                                              \
  template Tensor<T> reduce(Tape<T>&, Reduce, const Tensor<T>&, std::optional<int>);                        \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, const Shape&);                                     \
  template Tensor<T> permute(Tape<T>&, const Tensor<T>&, const std::vector<int>&);                          \
  template Tensor<T> gather_lastdim(Tape<T>&, const Tensor<T>&, const IndexTensor&);                        \
  template Tensor<T> upsample_bilinear(Tape<T>&, const Tensor<T>&, int);                                    \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

UFO_INSTANTIATE_OPS(float)
UFO_INSTANTIATE_OPS(double)

#undef UFO_INSTANTIATE_OPS

}  // namespace ops
}  // namespace ufo
