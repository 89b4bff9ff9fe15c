#include "app/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "loss/losses.hpp"
#include "model/network.hpp"
#include "tensor/ops.hpp"

namespace ufo {

namespace {

using T = double;
using Fn = std::function<Tensor<T>(Tape<T>&, const std::vector<Tensor<T>>&)>;

class Inputs {
 public:
  explicit Inputs(uint64_t seed) : rng_(seed) {}

  Tensor<T> uniform(const Shape& s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(s, 0.0, true);
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }
  // Values bounded away from zero so relu kinks are never crossed.
  Tensor<T> away_from_zero(const Shape& s) {
    auto t = uniform(s, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data())
      if (sign(rng_)) v = -v;
    return t;
  }
  // Distinct values spaced well beyond eps, so max never switches argument.
  Tensor<T> distinct(const Shape& s) {
    Tensor<T> t(s, 0.0, true);
    std::vector<double> v(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i) - 1.0;
    std::shuffle(v.begin(), v.end(), rng_);
    std::copy(v.begin(), v.end(), t.data().begin());
    return t;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Case {
  std::string op;
  std::string name;
  Fn fn;
  std::vector<Tensor<T>> inputs;
};

std::vector<Case> build_cases(uint64_t seed) {
  Inputs in(seed);
  std::vector<Case> cs;
  using namespace ops;

  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      cs.push_back({"matmul", "batched ta=" + std::to_string(ta) + " tb=" + std::to_string(tb),
                    [ta, tb](Tape<T>& t, const auto& x) { return matmul(t, x[0], x[1], ta != 0, tb != 0); },
                    {in.uniform(sa), in.uniform(sb)}});
    }
  cs.push_back({"matmul", "rank4", [](Tape<T>& t, const auto& x) { return matmul(t, x[0], x[1]); },
                {in.uniform({2, 2, 3, 4}), in.uniform({2, 2, 4, 3})}});

  cs.push_back({"linear", "rank2", [](Tape<T>& t, const auto& x) { return linear(t, x[0], x[1], x[2]); },
                {in.uniform({3, 4}), in.uniform({4, 5}), in.uniform({5})}});
  cs.push_back({"linear", "rank3 no bias",
                [](Tape<T>& t, const auto& x) { return linear(t, x[0], x[1], Tensor<T>()); },
                {in.uniform({2, 3, 4}), in.uniform({4, 2})}});

  cs.push_back({"conv2d", "3x3 s1 p1", [](Tape<T>& t, const auto& x) { return conv2d(t, x[0], x[1], x[2], 1, 1); },
                {in.uniform({2, 3, 6, 6}), in.uniform({4, 3, 3, 3}), in.uniform({4})}});
  cs.push_back({"conv2d", "4x4 s2 p1", [](Tape<T>& t, const auto& x) { return conv2d(t, x[0], x[1], x[2], 2, 1); },
                {in.uniform({1, 2, 8, 8}), in.uniform({3, 2, 4, 4}), in.uniform({3})}});
  cs.push_back({"conv2d", "1x1 no bias",
                [](Tape<T>& t, const auto& x) { return conv2d(t, x[0], x[1], Tensor<T>(), 1, 0); },
                {in.uniform({2, 3, 4, 4}), in.uniform({2, 3, 1, 1})}});

  using Bin = Tensor<T> (*)(Tape<T>&, const Tensor<T>&, const Tensor<T>&);
  const std::pair<const char*, Bin> binaries[] = {{"add", &add<T>}, {"sub", &sub<T>}, {"mul", &mul<T>}};
  for (const auto& [name, f] : binaries) {
    Fn fn = [f](Tape<T>& t, const auto& x) { return f(t, x[0], x[1]); };
    cs.push_back({name, "same shape", fn, {in.uniform({2, 3, 4}), in.uniform({2, 3, 4})}});
    cs.push_back({name, "single element", fn, {in.uniform({2, 3, 4}), in.uniform({1})}});
    cs.push_back({name, "size-1 dims", fn, {in.uniform({2, 3, 4, 4}), in.uniform({2, 3, 1, 1})}});
    cs.push_back({name, "spatial map", fn, {in.uniform({2, 3, 4, 4}), in.uniform({2, 1, 4, 4})}});
    cs.push_back({name, "channel vector", fn, {in.uniform({2, 3, 4, 4}), in.uniform({3})}});
  }

  cs.push_back({"relu", "", [](Tape<T>& t, const auto& x) { return relu(t, x[0]); }, {in.away_from_zero({3, 4, 5})}});
  cs.push_back({"sigmoid", "", [](Tape<T>& t, const auto& x) { return sigmoid(t, x[0]); },
                {in.uniform({3, 4}, -6.0, 6.0)}});
  cs.push_back({"log", "", [](Tape<T>& t, const auto& x) { return log(t, x[0]); }, {in.uniform({3, 4}, 0.2, 3.0)}});
  cs.push_back({"scale", "", [](Tape<T>& t, const auto& x) { return scale(t, x[0], -1.7); }, {in.uniform({2, 5})}});

  for (int axis : {-1, 1, 0}) {
    cs.push_back({"softmax", "axis " + std::to_string(axis),
                  [axis](Tape<T>& t, const auto& x) { return softmax(t, x[0], axis); }, {in.uniform({3, 4, 5}, -3, 3)}});
  }

  const std::pair<const char*, Reduce> reductions[] = {
      {"reduce_sum", Reduce::kSum}, {"reduce_mean", Reduce::kMean}, {"reduce_max", Reduce::kMax}};
  for (const auto& [name, kind] : reductions) {
    for (int axis : {-2, 0, 3}) {
      cs.push_back({name, "axis " + std::to_string(axis),
                    [kind, axis](Tape<T>& t, const auto& x) { return reduce(t, kind, x[0], axis); },
                    {in.distinct({2, 3, 2, 4})}});
    }
    cs.push_back({name, "all", [kind](Tape<T>& t, const auto& x) { return reduce(t, kind, x[0]); },
                  {in.distinct({3, 5})}});
  }

  cs.push_back({"reshape", "", [](Tape<T>& t, const auto& x) { return reshape(t, x[0], Shape{4, 6}); },
                {in.uniform({2, 3, 4})}});
  for (const auto& perm : std::vector<std::vector<int>>{{1, 0}, {0, 2, 1}, {2, 0, 1}, {0, 3, 1, 2}, {3, 2, 1, 0}}) {
    Shape s;
    for (std::size_t i = 0; i < perm.size(); ++i) s.push_back(static_cast<int64_t>(i) + 2);
    std::string label;
    for (int p : perm) label += std::to_string(p);
    cs.push_back({"permute", label, [perm](Tape<T>& t, const auto& x) { return permute(t, x[0], perm); },
                  {in.uniform(s)}});
  }

  {
    IndexTensor idx({2, 3}, {4, 0, 4, 1, 2, 3});
    cs.push_back({"gather_lastdim", "repeated index",
                  [idx](Tape<T>& t, const auto& x) { return gather_lastdim(t, x[0], idx); }, {in.uniform({2, 3, 5})}});
    IndexTensor idx2({2, 4, 2}, {1, 3, 0, 2, 3, 0, 1, 1, 2, 0, 3, 1, 0, 0, 2, 3});
    cs.push_back({"gather_lastdim", "two leading dims",
                  [idx2](Tape<T>& t, const auto& x) { return gather_lastdim(t, x[0], idx2); },
                  {in.uniform({2, 4, 3, 4})}});
  }

  for (int factor : {2, 3}) {
    cs.push_back({"upsample_bilinear", "x" + std::to_string(factor),
                  [factor](Tape<T>& t, const auto& x) { return upsample_bilinear(t, x[0], factor); },
                  {in.uniform({2, 2, 3, 4})}});
  }

  cs.push_back({"layer_norm", "", [](Tape<T>& t, const auto& x) { return layer_norm(t, x[0], x[1], x[2]); },
                {in.uniform({2, 3, 6}), in.uniform({6}), in.uniform({6})}});

  cs.push_back({"loss_cls", "",
                [](Tape<T>& t, const auto& x) { return loss_cls(t, x[0], std::vector<int64_t>{2, 0, 1, 2}); },
                {in.uniform({4, 3}, -2, 2)}});
  {
    Tensor<T> gt({3, 1, 4, 4});
    std::bernoulli_distribution coin(0.4);
    for (auto& v : gt.data()) v = coin(in.rng()) ? 1.0 : 0.0;
    gt.data()[0] = 1.0;
    for (bool swap : {false, true}) {
      cs.push_back({"loss_wbce", swap ? "swapped" : "as printed",
                    [gt, swap](Tape<T>& t, const auto& x) {
                      WbceOptions o;
                      o.swap_gamma = swap;
                      return loss_wbce(t, x[0], gt, o);
                    },
                    {in.uniform({3, 1, 4, 4}, 0.05, 0.95)}});
    }
    cs.push_back({"loss_iou", "", [gt](Tape<T>& t, const auto& x) { return loss_iou(t, x[0], gt); },
                  {in.uniform({3, 1, 4, 4}, 0.0, 1.0)}});
  }
  return cs;
}

void merge(OpCheck& into, const GradCheckReport& r, const std::string& case_name) {
  into.max_rel_err = std::max(into.max_rel_err, r.max_rel_err);
  into.checked += r.checked;
  if (!r.passed) {
    into.passed = false;
    into.failed_cases.push_back(case_name.empty() ? r.summary() : case_name + ": " + r.summary());
  }
}

}  // namespace

std::vector<OpCheck> check_ops(const GradCheckConfig& cfg) {
  GradCheckOptions opts;
  opts.eps = cfg.eps;
  opts.tol = cfg.tol;
  opts.seed = cfg.seed;
  std::vector<OpCheck> out;
  std::map<std::string, std::size_t> slot;
  for (auto& c : build_cases(cfg.seed)) {
    auto it = slot.find(c.op);
    if (it == slot.end()) {
      it = slot.emplace(c.op, out.size()).first;
      out.emplace_back().op = c.op;
    }
    merge(out[it->second], grad_check(c.fn, c.inputs, opts, c.op), c.name);
  }
  return out;
}

OpCheck check_end_to_end(const RunConfig& cfg) {
  const auto& g = cfg.gradcheck;
  UfoNet<T> net(cfg.effective_model());
  const int64_t bn = static_cast<int64_t>(g.batch_groups) * g.group_size;

  std::mt19937_64 rng(g.seed + 17);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // Zero-initialized biases put pre-activations of all-zero features exactly
  // on the relu kink; jitter every parameter to a generic point first.
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (auto& p : net.params().tensors())
    for (auto& v : p.data()) v += jitter(rng);
  Tensor<T> images({bn, cfg.model.encoder.in_channels, g.height, g.width});
  for (auto& v : images.data()) v = uni(rng);
  // Each mask is a filled rectangle covering a random quarter-ish region.
  Tensor<T> masks({bn, 1, g.height, g.width});
  for (int64_t n = 0; n < bn; ++n) {
    const int y0 = static_cast<int>(uni(rng) * g.height / 2), x0 = static_cast<int>(uni(rng) * g.width / 2);
    for (int i = y0; i < y0 + g.height / 2; ++i)
      for (int j = x0; j < x0 + g.width / 2; ++j) masks.data()[(n * g.height + i) * g.width + j] = 1.0;
  }
  std::vector<int64_t> labels;
  for (int b = 0; b < g.batch_groups; ++b)
    for (int n = 0; n < g.group_size; ++n) labels.push_back(b % cfg.model.semantic.num_classes);

  IndexTensor neighbors;
  {
    Tape<T> off(false);
    neighbors = net.forward(off, images, g.group_size).neighbors;
  }
  const IndexTensor* frozen = cfg.ablation.beta_on ? &neighbors : nullptr;

  Fn fn = [&](Tape<T>& tape, const std::vector<Tensor<T>>&) {
    auto out = net.forward(tape, images, g.group_size, nullptr, frozen);
    WbceOptions wopts;
    wopts.swap_gamma = cfg.train.wbce_swap_gamma;
    auto cls = cfg.train.freeze_classifier ? Tensor<T>() : loss_cls(tape, out.logits, labels);
    return total_loss(tape, cls, loss_wbce(tape, out.probs, masks, wopts), loss_iou(tape, out.probs, masks)).total;
  };
  GradCheckOptions opts;
  opts.eps = g.eps;
  opts.tol = g.tol;
  opts.seed = g.seed;
  const auto report = grad_check(fn, net.params().tensors(), opts, "end_to_end");
  OpCheck oc;
  oc.op = "end_to_end";
  merge(oc, report, "");
  if (!report.passed) {
    // Name the parameters whose gradients disagree.
    std::ostringstream os;
    for (std::size_t i = 0; i < report.failures.size() && i < 8; ++i) {
      os << (i ? ", " : "") << net.params().names()[report.failures[i].input];
    }
    oc.failed_cases.push_back("parameters: " + os.str());
  }
  return oc;
}

GradSuiteReport run_gradcheck_suite(const RunConfig& cfg) {
  GradSuiteReport r;
  r.ops = check_ops(cfg.gradcheck);
  r.end_to_end = check_end_to_end(cfg);
  r.passed = r.end_to_end.passed;
  for (const auto& o : r.ops) r.passed = r.passed && o.passed;
  return r;
}

nlohmann::json GradSuiteReport::to_json() const {
  auto one = [](const OpCheck& o) {
    return nlohmann::json{{"op", o.op},
                          {"max_rel_err", o.max_rel_err},
                          {"checked", o.checked},
                          {"passed", o.passed},
                          {"failures", o.failed_cases}};
  };
  nlohmann::json ops_json = nlohmann::json::array();
  for (const auto& o : ops) ops_json.push_back(one(o));
  return {{"ops", ops_json}, {"end_to_end", one(end_to_end)}, {"passed", passed}};
}

std::string GradSuiteReport::text() const {
  std::ostringstream os;
  auto line = [&](const OpCheck& o) {
    os << o.op << " max_rel_err=" << o.max_rel_err << " checked=" << o.checked << (o.passed ? " PASS" : " FAIL")
       << '\n';
    for (const auto& f : o.failed_cases) os << "  " << f << '\n';
  };
  for (const auto& o : ops) line(o);
  line(end_to_end);
  os << (passed ? "gradcheck: all passed" : "gradcheck: FAILED") << '\n';
  return os.str();
}

}  // namespace ufo
