#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "app/run_config.hpp"
#include "tensor/gradcheck.hpp"

namespace ufo {

struct OpCheck {
  std::string op;
  double max_rel_err = 0;
  int64_t checked = 0;
  bool passed = true;
  std::vector<std::string> failed_cases;
};

struct GradSuiteReport {
  std::vector<OpCheck> ops;
  OpCheck end_to_end;
  bool passed = true;

  nlohmann::json to_json() const;
  // One line per op: "<op> max_rel_err=<e> checked=<n> PASS|FAIL".
  std::string text() const;
};

// Finite-difference checks of every differentiable kernel and loss in double
// precision, several shape/broadcast cases per op.
std::vector<OpCheck> check_ops(const GradCheckConfig& cfg);

// Gradient of the total loss of the full double-precision model with respect
// to every parameter. Neighbor indices are frozen after a first forward pass
// so the discrete top-K selection stays fixed under perturbation.
OpCheck check_end_to_end(const RunConfig& cfg);

GradSuiteReport run_gradcheck_suite(const RunConfig& cfg);

}  // namespace ufo
