#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"

namespace ufo {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-5;
  // Relative error is |a − n| / max(|a|, |n|, denom_floor).
  double denom_floor = 1e-6;
  // Upper bound on coordinates probed per input; < 0 probes all of them.
  int64_t max_coords_per_input = -1;
  uint64_t seed = 0;
};

struct GradCheckMismatch {
  std::size_t input = 0;
  int64_t coord = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  std::string label;
  double max_rel_err = 0;
  int64_t checked = 0;
  bool passed = true;
  std::vector<GradCheckMismatch> failures;

  std::string summary() const;
};

using TensorFunction = std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of every requires_grad input against central
// differences. Non-scalar outputs are reduced with a fixed seeded random
// projection so every output element participates.
GradCheckReport grad_check(const TensorFunction& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts = {}, std::string label = {});

}  // namespace ufo
