#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace ufo::detail {

// C(m×n) (+)= op(A)·op(B) on contiguous row-major buffers. A is stored as
// (m×k), or (k×m) when trans_a; B likewise.
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  Eigen::Map<const Mat> am(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

}  // namespace ufo::detail
