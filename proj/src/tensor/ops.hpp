#pragma once

#include <optional>
#include <string_view>

#include "tensor/tensor.hpp"

// Differentiable kernels. Every op takes the tape it records onto; when the
// tape is disabled or no input requires a gradient nothing is recorded and the
// result is a plain constant.
namespace ufo::ops {

// C = op(A)·op(B) over matching leading batch dims (rank 2..4).
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false);

// y = x·W + bias along the last axis. x: (..., in), W: (in, out), bias: (out) or undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Zero-padded 2-D cross-correlation. x: (N,C,H,W), weight: (O,C,KH,KW), bias: (O) or undefined.
// The output size (H + 2·pad − KH)/stride + 1 must divide exactly.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad);

// Binary ops broadcast `b` onto the shape of `a`. Accepted forms for b: same
// shape, a single element, same rank with size-1 dims, or a rank-1 per-channel
// vector against a rank-4 (N,C,H,W) tensor.
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x);
// Throws DomainError on any non-positive input.
template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);

// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis);

enum class Reduce { kSum, kMean, kMax };

// Reduces one axis (dropping it) or, with no axis, everything to shape (1).
// Max routes its gradient to the first maximal element only.
template <typename T>
Tensor<T> reduce(Tape<T>& tape, Reduce kind, const Tensor<T>& x, std::optional<int> axis = std::nullopt);

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, const Shape& shape);
template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& perm);

// x: (A..., M..., Q), idx: (A..., K) -> (A..., M..., K) with
// out[a, m, k] = x[a, m, idx[a, k]]. Indices are shared across the M dims.
template <typename T>
Tensor<T> gather_lastdim(Tape<T>& tape, const Tensor<T>& x, const IndexTensor& idx);

// Bilinear resize of (N,C,H,W) by an integer factor, half-pixel centers
// (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& x, int factor);

// Normalizes each vector along the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

}  // namespace ufo::ops

namespace ufo::testing {

// Negates the input gradients produced by the named op's backward ("conv2d",
// "matmul", ...). Used by gradient-check negative controls.
void inject_backward_fault(std::string_view op);
void clear_backward_faults();
bool backward_fault_active(std::string_view op);

}  // namespace ufo::testing
