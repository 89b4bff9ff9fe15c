#include "tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "tensor/ops.hpp"

namespace ufo {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (label.empty() ? "gradcheck" : label) << ": max_rel_err=" << max_rel_err << " checked=" << checked
     << (passed ? " PASS" : " FAIL");
  for (std::size_t i = 0; i < failures.size() && i < 5; ++i) {
    const auto& f = failures[i];
    os << "\n  input " << f.input << " coord " << f.coord << ": analytic=" << f.analytic << " numeric=" << f.numeric
       << " rel_err=" << f.rel_err;
  }
  if (failures.size() > 5) os << "\n  ... " << failures.size() - 5 << " more";
  return os.str();
}

namespace {

double projected(const Tensor<double>& y, const std::vector<double>& u) {
  double s = 0;
  auto d = y.data();
  for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * u[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const TensorFunction& f, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts, std::string label) {
  GradCheckReport report;
  report.label = std::move(label);
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  for (const auto& in : inputs) {
    if (in.requires_grad()) in.zero_grad();
  }

  std::vector<double> u;
  {
    Tape<double> tape;
    auto y = f(tape, inputs);
    u.resize(static_cast<std::size_t>(y.numel()));
    if (y.numel() == 1) {
      u[0] = 1.0;
    } else {
      for (auto& v : u) v = uni(rng);
    }
    Tensor<double> weights(y.shape(), u);
    auto loss = ops::reduce(tape, ops::Reduce::kSum, ops::mul(tape, y, weights));
    tape.backward(loss);
  }

  auto evaluate = [&]() {
    Tape<double> off(false);
    return projected(f(off, inputs), u);
  };

  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    Tensor<double> x = inputs[ii];
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<int64_t> coords(static_cast<std::size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) coords[i] = i;
    if (opts.max_coords_per_input >= 0 && x.numel() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.max_coords_per_input));
      std::sort(coords.begin(), coords.end());
    }

    auto data = x.data();
    for (int64_t c : coords) {
      const double orig = data[c];
      data[c] = orig + opts.eps;
      const double fp = evaluate();
      data[c] = orig - opts.eps;
      const double fm = evaluate();
      data[c] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double a = analytic[c];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (!(rel <= opts.tol)) {
        report.passed = false;
        report.failures.push_back({ii, c, a, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace ufo
