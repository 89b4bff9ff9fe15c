#include "model/intra_mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tensor/ops.hpp"

namespace ufo {

template <typename T>
Tensor<T> similarity(const Tensor<T>& f4) {
  if (f4.rank() != 4) throw ShapeError("similarity expects (B*N,C,h,w), got " + shape_str(f4.shape()));
  const int64_t bn = f4.dim(0), c = f4.dim(1), q = f4.dim(2) * f4.dim(3);
  Tensor<T> out({bn, q, q});
  std::vector<T> unit(static_cast<std::size_t>(c * q));
  for (int64_t b = 0; b < bn; ++b) {
    const T* src = f4.ptr() + b * c * q;
    // unit[p, ch] = f[ch, p] / ||f[:, p]||
    for (int64_t p = 0; p < q; ++p) {
      T ss = 0;
      for (int64_t ch = 0; ch < c; ++ch) ss += src[ch * q + p] * src[ch * q + p];
      const T norm = std::sqrt(ss);
      const T inv = norm > T(0) ? T(1) / norm : T(0);
      for (int64_t ch = 0; ch < c; ++ch) unit[p * c + ch] = src[ch * q + p] * inv;
    }
    T* m = out.ptr() + b * q * q;
    for (int64_t p = 0; p < q; ++p) {
      for (int64_t r = p + 1; r < q; ++r) {
        T dot = 0;
        for (int64_t ch = 0; ch < c; ++ch) dot += unit[p * c + ch] * unit[r * c + ch];
        m[p * q + r] = dot;
        m[r * q + p] = dot;
      }
      m[p * q + p] = std::numeric_limits<T>::lowest();
    }
  }
  return out;
}

template <typename T>
IndexTensor topk_neighbors(const Tensor<T>& sim, int k) {
  if (sim.rank() != 3 || sim.dim(1) != sim.dim(2)) {
    throw ShapeError("topk_neighbors expects (B*N,Q,Q), got " + shape_str(sim.shape()));
  }
  const int64_t bn = sim.dim(0), q = sim.dim(1);
  if (k < 1 || k > q - 1) {
    throw ConfigError("K = " + std::to_string(k) + " outside [1, Q-1] for Q = " + std::to_string(q) + " patches");
  }
  std::vector<int64_t> idx(static_cast<std::size_t>(bn * q * k));
  std::vector<int64_t> cand(static_cast<std::size_t>(q - 1));
  for (int64_t b = 0; b < bn; ++b) {
    for (int64_t p = 0; p < q; ++p) {
      const T* row = sim.ptr() + (b * q + p) * q;
      int64_t n = 0;
      for (int64_t r = 0; r < q; ++r)
        if (r != p) cand[n++] = r;
      std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), [row](int64_t a, int64_t c) {
        if (row[a] != row[c]) return row[a] > row[c];
        return a < c;
      });
      std::copy(cand.begin(), cand.begin() + k, idx.begin() + (b * q + p) * k);
    }
  }
  return IndexTensor({bn, q, k}, std::move(idx));
}

template <typename T>
IntraMlp<T>::IntraMlp(const IntraMlpConfig& cfg, int channels, ParameterStore<T>& store, const std::string& prefix)
    : cfg_(cfg), channels_(channels) {
  if (cfg.k < 1) throw ConfigError("intra_mlp.k must be >= 1");
  const int64_t c = channels;
  w1 = store.add(prefix + ".mlp.w1", {c, c}, Init::kGlorot, cfg.edge_concat ? 2 * c : c, c);
  b1 = store.add(prefix + ".mlp.b1", {c}, Init::kZeros);
  if (cfg.edge_concat) w1_center = store.add(prefix + ".mlp.w1_center", {c, c}, Init::kGlorot, 2 * c, c);
  w2 = store.add(prefix + ".mlp.w2", {c, c}, Init::kGlorot, c, c);
  b2 = store.add(prefix + ".mlp.b2", {c}, Init::kZeros);
  proj_w = store.add(prefix + ".proj.weight", {c, 1}, Init::kGlorot, c, 1);
  proj_b = store.add(prefix + ".proj.bias", {1}, Init::kZeros);
}

template <typename T>
Tensor<T> IntraMlp<T>::aggregate(Tape<T>& tape, const Tensor<T>& f4, const IndexTensor& neighbors) const {
  if (f4.rank() != 4 || f4.dim(1) != channels_) {
    throw ShapeError("intra-MLP expects (B*N," + std::to_string(channels_) + ",h,w), got " + shape_str(f4.shape()));
  }
  const int64_t bn = f4.dim(0), c = f4.dim(1), h = f4.dim(2), w = f4.dim(3), q = h * w;
  if (neighbors.shape.size() != 3 || neighbors.shape[0] != bn || neighbors.shape[1] != q) {
    throw ShapeError("neighbor index " + shape_str(neighbors.shape) + " inconsistent with features " +
                     shape_str(f4.shape()));
  }
  const int64_t k = neighbors.shape[2];
  IndexTensor flat({bn, q * k}, neighbors.data);
  auto x = ops::reshape(tape, f4, {bn, c, q});
  auto g = ops::gather_lastdim(tape, x, flat);                     // (BN, C, Q·K)
  g = ops::permute(tape, ops::reshape(tape, g, {bn, c, q, k}), {0, 2, 3, 1});  // (BN, Q, K, C)
  auto hdn = ops::linear(tape, g, w1, b1);
  if (cfg_.edge_concat) {
    auto center = ops::permute(tape, x, {0, 2, 1});  // (BN, Q, C)
    auto cproj = ops::reshape(tape, ops::linear(tape, center, w1_center, Tensor<T>()), {bn, q, 1, c});
    hdn = ops::add(tape, hdn, cproj);
  }
  hdn = ops::relu(tape, hdn);
  hdn = ops::linear(tape, hdn, w2, b2);
  auto z = ops::reduce(tape, ops::Reduce::kMax, hdn, 2);  // (BN, Q, C)
  auto s = ops::linear(tape, z, proj_w, proj_b);          // (BN, Q, 1)
  return ops::sigmoid(tape, ops::reshape(tape, s, {bn, 1, h, w}));
}

template <typename T>
Tensor<T> IntraMlp<T>::forward(Tape<T>& tape, const Tensor<T>& f4, const IndexTensor* frozen, IndexTensor* used) const {
  IndexTensor idx = frozen != nullptr ? *frozen : topk_neighbors(similarity(f4), cfg_.k);
  auto beta = aggregate(tape, f4, idx);
  if (used != nullptr) *used = std::move(idx);
  return beta;
}

template Tensor<float> similarity(const Tensor<float>&);
template Tensor<double> similarity(const Tensor<double>&);
template IndexTensor topk_neighbors(const Tensor<float>&, int);
template IndexTensor topk_neighbors(const Tensor<double>&, int);
template class IntraMlp<float>;
template class IntraMlp<double>;

}  // namespace ufo
