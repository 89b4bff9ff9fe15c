#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "loss/losses.hpp"
#include "loss/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "tensor/gradcheck.hpp"
#include "tensor/ops.hpp"

namespace ufo {
namespace {

using D = Tensor<double>;

double value(const D& t) { return t.item(); }

// ---------------------------------------------------------------- losses

TEST(LossCls, UniformLogitsGiveLogClassCount) {
  Tape<double> tape(false);
  EXPECT_NEAR(value(loss_cls(tape, D({3, 4}, 0.7), {0, 2, 3})), std::log(4.0), 1e-12);
}

TEST(LossCls, DominantTrueLogitTendsToZero) {
  Tape<double> tape(false);
  D logits({2, 3}, {200, 0, 0, 0, 0, 200});
  EXPECT_LT(value(loss_cls(tape, logits, {0, 2})), 1e-12);
}

TEST(LossCls, MatchesHandSoftmax) {
  Tape<double> tape(false);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto logits = test::random_tensor({4, 3}, seed, -3, 3);
    std::vector<int64_t> labels = {static_cast<int64_t>(seed % 3), 0, 1, 2};
    double ref = 0;
    for (int i = 0; i < 4; ++i) {
      double z = 0;
      for (int k = 0; k < 3; ++k) z += std::exp(logits.data()[i * 3 + k]);
      ref += -std::log(std::exp(logits.data()[i * 3 + labels[i]]) / z);
    }
    EXPECT_NEAR(value(loss_cls(tape, logits, labels)), ref / 4, 1e-9);
  }
}

TEST(LossCls, BadLabelsRejected) {
  Tape<double> tape(false);
  EXPECT_THROW(loss_cls(tape, D({2, 3}), {0, 3}), DataError);
  EXPECT_THROW(loss_cls(tape, D({2, 3}), {0, -1}), DataError);
  EXPECT_THROW(loss_cls(tape, D({2, 3}), {0}), ShapeError);
}

TEST(LossWbce, AllPositiveHalfPrediction) {
  Tape<double> tape(false);
  EXPECT_NEAR(value(loss_wbce(tape, D({1, 1, 3, 3}, 0.5), D({1, 1, 3, 3}, 1.0))), 0.6931, 1e-4);
}

TEST(LossWbce, PerfectNegativeIsZero) {
  Tape<double> tape(false);
  int64_t clamped = 0;
  auto l = loss_wbce(tape, D({1, 1, 2, 2}, 0.0), D({1, 1, 2, 2}, 0.0), {}, &clamped);
  EXPECT_NEAR(value(l), 0.0, 1e-6);
  EXPECT_EQ(clamped, 4);
}

TEST(LossWbce, OnePositiveOfFour) {
  Tape<double> tape(false);
  D gt({1, 1, 2, 2}, {1, 0, 0, 0});
  EXPECT_NEAR(value(loss_wbce(tape, D({1, 1, 2, 2}, 0.5), gt)), 0.4332, 1e-4);
  EXPECT_NEAR(value(loss_wbce(tape, D({1, 1, 2, 2}, 0.5), gt)), 0.625 * std::log(2.0), 1e-12);
  // Swapped weighting: (1/4)(0.75 + 3·0.25)·ln 2.
  WbceOptions swap;
  swap.swap_gamma = true;
  EXPECT_NEAR(value(loss_wbce(tape, D({1, 1, 2, 2}, 0.5), gt, swap)), 0.375 * std::log(2.0), 1e-12);
}

TEST(LossWbce, MatchesPixelLoopAndAveragesImages) {
  Tape<double> tape(false);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto pred = test::random_tensor({3, 1, 4, 5}, seed, 0.01, 0.99);
    auto gt = test::random_tensor({3, 1, 4, 5}, seed + 50, 0, 1);
    for (auto& v : gt.data()) v = v > 0.6 ? 1 : 0;
    double ref = 0;
    for (int n = 0; n < 3; ++n) {
      double pos = 0, s = 0;
      for (int i = 0; i < 20; ++i) pos += gt.data()[n * 20 + i];
      const double g = pos / 20;
      for (int i = 0; i < 20; ++i) {
        const double p = pred.data()[n * 20 + i], y = gt.data()[n * 20 + i];
        s += g * y * std::log(p) + (1 - g) * (1 - y) * std::log(1 - p);
      }
      ref += -s / 20;
    }
    EXPECT_NEAR(value(loss_wbce(tape, pred, gt)), ref / 3, 1e-12);
  }
}

TEST(LossIou, HandExamples) {
  Tape<double> tape(false);
  D g({1, 1, 2, 2}, {1, 0, 1, 1});
  EXPECT_NEAR(value(loss_iou(tape, g, g)), 0.0, 1e-4);
  EXPECT_NEAR(value(loss_iou(tape, D({1, 1, 2, 2}, 0.0), g)), 1.0, 1e-4);
  EXPECT_NEAR(value(loss_iou(tape, D({1, 1, 2, 2}, 0.5), D({1, 1, 2, 2}, 1.0))), 0.5, 1e-4);
  EXPECT_EQ(value(loss_iou(tape, D({1, 1, 2, 2}, 0.0), D({1, 1, 2, 2}, 0.0))), 0.0);
}

TEST(LossIou, JointPermutationInvariance) {
  Tape<double> tape(false);
  auto p = test::random_tensor({2, 1, 4, 4}, 3, 0, 1);
  auto g = test::random_tensor({2, 1, 4, 4}, 4, 0, 1);
  for (auto& v : g.data()) v = v > 0.5 ? 1 : 0;
  std::vector<int> order(16);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(5));
  D pp(p.shape()), gp(g.shape());
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 16; ++i) {
      pp.data()[n * 16 + i] = p.data()[n * 16 + order[i]];
      gp.data()[n * 16 + i] = g.data()[n * 16 + order[i]];
    }
  EXPECT_NEAR(value(loss_iou(tape, p, g)), value(loss_iou(tape, pp, gp)), 1e-12);
}

TEST(LossTotal, SumsTerms) {
  Tape<double> tape(false);
  auto zero = total_loss(tape, D::scalar(0), D::scalar(0), D::scalar(0));
  EXPECT_EQ(zero.breakdown.total, 0.0);
  auto t = total_loss(tape, D::scalar(1), D::scalar(2), D::scalar(3));
  EXPECT_EQ(value(t.total), 6.0);
  EXPECT_EQ(t.breakdown.cls, 1.0);
  EXPECT_EQ(t.breakdown.wbce, 2.0);
  EXPECT_EQ(t.breakdown.iou, 3.0);
  auto frozen = total_loss(tape, D(), D::scalar(2), D::scalar(3));
  EXPECT_EQ(frozen.breakdown.total, 5.0);
  EXPECT_EQ(frozen.breakdown.cls, 0.0);
}

TEST(LossTotal, GradientIsSumOfTermGradients) {
  auto logits = test::random_tensor({2, 3}, 6, -1, 1, true);
  auto raw = test::random_tensor({2, 1, 3, 3}, 7, -2, 2, true);
  auto gt = test::random_tensor({2, 1, 3, 3}, 8, 0, 1);
  for (auto& v : gt.data()) v = v > 0.5 ? 1 : 0;
  auto term = [&](int which) {
    return [&, which](Tape<double>& t, const std::vector<D>&) {
      auto pred = ops::sigmoid(t, raw);
      auto c = loss_cls(t, logits, {0, 2});
      auto w = loss_wbce(t, pred, gt);
      auto i = loss_iou(t, pred, gt);
      if (which == 0) return c;
      if (which == 1) return w;
      if (which == 2) return i;
      return total_loss(t, c, w, i).total;
    };
  };
  GradCheckOptions o;
  o.eps = 1e-6;
  o.tol = 1e-6;
  auto r = grad_check(term(3), {logits, raw}, o, "total");
  EXPECT_TRUE(r.passed) << r.summary();

  std::vector<double> sum_raw(raw.numel(), 0.0), sum_logits(logits.numel(), 0.0);
  for (int which = 0; which < 4; ++which) {
    logits.zero_grad();
    raw.zero_grad();
    Tape<double> tape;
    auto l = term(which)(tape, {});
    tape.backward(l);
    auto gl = logits.grad(), gr = raw.grad();
    if (which < 3) {
      for (std::size_t k = 0; k < gl.size(); ++k) sum_logits[k] += gl[k];
      for (std::size_t k = 0; k < gr.size(); ++k) sum_raw[k] += gr[k];
    } else {
      for (std::size_t k = 0; k < gl.size(); ++k) EXPECT_NEAR(gl[k], sum_logits[k], 1e-12);
      for (std::size_t k = 0; k < gr.size(); ++k) EXPECT_NEAR(gr[k], sum_raw[k], 1e-12);
    }
  }
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, FMeasureHalfHalf) {
  EXPECT_NEAR(f_measure(0.5, 0.5), 1.3 * 0.25 / 0.65, 1e-12);
  EXPECT_NEAR(f_measure(0.5, 0.5), 0.5, 1e-12);
  EXPECT_EQ(f_measure(0, 0), 0.0);
}

TEST(Metrics, IdentityAndDisjoint) {
  std::vector<float> g = {1, 1, 0, 0, 0, 1, 0, 0};
  auto m = image_metrics(g, g);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.jaccard, 1.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.f_beta, 1.0);
  std::vector<float> a = {1, 1, 0, 0}, b = {0, 0, 1, 1};
  EXPECT_EQ(image_metrics(a, b).jaccard, 0.0);
}

TEST(Metrics, EmptyConventions) {
  std::vector<float> zero(4, 0.f), some = {0, 1, 0, 0};
  auto both = image_metrics(zero, zero);
  EXPECT_EQ(both.precision, 1.0);
  EXPECT_EQ(both.jaccard, 1.0);
  auto miss = image_metrics(zero, some);
  EXPECT_EQ(miss.precision, 0.0);
  EXPECT_EQ(miss.jaccard, 0.0);
  EXPECT_THROW(image_metrics(zero, std::vector<float>(3, 0.f)), ShapeError);
}

TEST(Metrics, MatchBruteForceOn8x8) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    MetricAccumulator acc;
    std::vector<std::vector<float>> ps, gs;
    for (int img = 0; img < 3; ++img) {
      std::vector<float> p(64), g(64);
      for (auto& v : p) v = u(rng);
      // Quantized values exercise exact threshold hits.
      if (img == 1)
        for (auto& v : p) v = std::round(v * 255.f) / 255.f;
      for (auto& v : g) v = u(rng) < 0.4f ? 1.f : 0.f;
      acc.add(p, g, 0, img);
      ps.push_back(p);
      gs.push_back(g);
    }
    auto r = acc.report();
    ASSERT_EQ(r.per_image.size(), 3u);
    double mean_j = 0;
    for (int img = 0; img < 3; ++img) {
      auto o = oracle::metrics(ps[img], gs[img], 0.5);
      EXPECT_NEAR(r.per_image[img].precision, o.precision, 1e-6);
      EXPECT_NEAR(r.per_image[img].jaccard, o.jaccard, 1e-6);
      EXPECT_NEAR(r.per_image[img].mae, o.mae, 1e-6);
      EXPECT_NEAR(r.per_image[img].f_beta, o.f, 1e-6);
      mean_j += o.jaccard / 3;
    }
    EXPECT_NEAR(r.mean.jaccard, mean_j, 1e-6);
    ASSERT_EQ(r.curve.size(), 256u);
    double max_f = 0;
    for (int t = 0; t < 256; ++t) {
      double prec = 0, rec = 0;
      for (int img = 0; img < 3; ++img) {
        const auto o = oracle::metrics(ps[img], gs[img], t / 255.0);
        prec += o.precision / 3;
        rec += o.recall / 3;
      }
      EXPECT_NEAR(r.curve[t].threshold, t / 255.0, 1e-12);
      EXPECT_NEAR(r.curve[t].precision, prec, 1e-6) << "threshold " << t;
      EXPECT_NEAR(r.curve[t].recall, rec, 1e-6) << "threshold " << t;
      max_f = std::max(max_f, f_measure(prec, rec));
    }
    EXPECT_NEAR(r.max_f, max_f, 1e-6);
  }
}

TEST(Metrics, MaeComplementSymmetry) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> p(64), g(64), pc(64), gc(64);
  for (int i = 0; i < 64; ++i) {
    p[i] = u(rng);
    g[i] = u(rng) < 0.5f ? 1.f : 0.f;
    pc[i] = 1.f - p[i];
    gc[i] = 1.f - g[i];
  }
  EXPECT_NEAR(image_metrics(p, g).mae, image_metrics(pc, gc).mae, 1e-6);
}

TEST(Metrics, ReportJsonAndCsvSchema) {
  MetricAccumulator acc;
  std::vector<float> p = {0.9f, 0.2f, 0.6f, 0.1f}, g = {1, 0, 0, 0};
  acc.add(p, g, 4, 1);
  auto r = acc.report();
  auto j = r.to_json();
  for (const char* key : {"num_images", "mean", "max_f", "f_beta_squared", "per_image", "pr_curve", "f_curve"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["num_images"], 1);
  for (const char* key : {"precision", "jaccard", "mae", "f_beta"}) {
    EXPECT_TRUE(j["mean"][key].is_number()) << key;
    EXPECT_GE(j["mean"][key].get<double>(), 0.0);
    EXPECT_LE(j["mean"][key].get<double>(), 1.0);
  }
  EXPECT_EQ(j["per_image"][0]["group"], 4);
  EXPECT_EQ(j["per_image"][0]["image"], 1);
  EXPECT_EQ(j["pr_curve"].size(), 256u);
  EXPECT_EQ(j["f_curve"].size(), 256u);
  EXPECT_TRUE(j["pr_curve"][10].contains("recall"));
  EXPECT_TRUE(j["f_curve"][10].contains("f"));

  std::istringstream csv(r.curve_csv());
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "threshold,precision,recall,f");
  int rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
    ++rows;
  }
  EXPECT_EQ(rows, 256);
}

}  // namespace
}  // namespace ufo
