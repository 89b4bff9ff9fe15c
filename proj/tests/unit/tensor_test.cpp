#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "app/gradcheck_suite.hpp"
#include "support.hpp"
#include "tensor/adam.hpp"
#include "tensor/gradcheck.hpp"
#include "tensor/ops.hpp"

namespace ufo {
namespace {

using test::random_tensor;
using D = Tensor<double>;

double at4(const D& t, int64_t a, int64_t b, int64_t c, int64_t d) {
  const auto& s = t.shape();
  return t.data()[((a * s[1] + b) * s[2] + c) * s[3] + d];
}

TEST(Matmul, IdentityTimesMatrix) {
  Tape<double> tape(false);
  D eye({2, 2}, {1, 0, 0, 1});
  D m({2, 2}, {1, 2, 3, 4});
  auto c = ops::matmul(tape, eye, m);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  Tape<double> tape(false);
  auto c = ops::matmul(tape, D({1, 2}, {1, 2}), D({2, 1}, {3, 4}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Tape<double> tape(false);
    auto a = random_tensor({3, 4}, seed);
    auto b = random_tensor({4, 2}, seed + 100);
    auto c = ops::matmul(tape, a, b);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
        EXPECT_NEAR(c.data()[i * 2 + j], s, 1e-6);
      }
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape<double> tape(false);
  try {
    ops::matmul(tape, D({2, 3}), D({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4,2)"), std::string::npos) << msg;
  }
}

TEST(Matmul, BackwardIsTransposedProducts) {
  Tape<double> tape;
  auto a = random_tensor({2, 3}, 1, -1, 1, true);
  auto b = random_tensor({3, 2}, 2, -1, 1, true);
  auto loss = ops::reduce(tape, ops::Reduce::kSum, ops::matmul(tape, a, b));
  tape.backward(loss);
  // dC = ones: dA[i,k] = Σ_j B[k,j], dB[k,j] = Σ_i A[i,k]
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.grad()[i * 3 + k], b.data()[k * 2] + b.data()[k * 2 + 1], 1e-12);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(b.grad()[k * 2 + j], a.data()[k] + a.data()[3 + k], 1e-12);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Tape<double> tape(false);
  auto x = random_tensor({2, 1, 4, 4}, 3);
  auto y = ops::conv2d(tape, x, D({1, 1, 1, 1}, 1.0), D({1}, 0.0), 1, 0);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Conv2d, AllOnesKernelOnOnes) {
  Tape<double> tape(false);
  auto y = ops::conv2d(tape, D({1, 1, 3, 3}, 1.0), D({1, 1, 3, 3}, 1.0), D({1}, 0.0), 1, 1);
  EXPECT_EQ(at4(y, 0, 0, 1, 1), 9.0);
  for (auto [i, j] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) EXPECT_EQ(at4(y, 0, 0, i, j), 4.0);
  EXPECT_EQ(at4(y, 0, 0, 0, 1), 6.0);
}

TEST(Conv2d, MatchesDirectSummation) {
  for (int stride : {1, 2}) {
    Tape<float> tape(false);
    const int pad = 1, k = stride == 1 ? 3 : 4;
    auto x = random_tensor<float>({2, 3, 8, 8}, 10 + stride);
    auto w = random_tensor<float>({4, 3, k, k}, 20 + stride);
    auto b = random_tensor<float>({4}, 30 + stride);
    auto y = ops::conv2d(tape, x, w, b, stride, pad);
    const int oh = (8 + 2 * pad - k) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{2, 4, oh, oh}));
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < oh; ++j) {
            double s = b.data()[o];
            for (int c = 0; c < 3; ++c)
              for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                  const int yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                  if (yi < 0 || yi >= 8 || xj < 0 || xj >= 8) continue;
                  s += static_cast<double>(x.data()[((n * 3 + c) * 8 + yi) * 8 + xj]) *
                       w.data()[((o * 3 + c) * k + ki) * k + kj];
                }
            const double got = y.data()[((n * 4 + o) * oh + i) * oh + j];
            EXPECT_LE(std::abs(got - s), 1e-5 * std::max(1.0, std::abs(s)));
          }
  }
}

TEST(Conv2d, InexactOutputSizeIsConfigError) {
  Tape<double> tape(false);
  EXPECT_THROW(ops::conv2d(tape, D({1, 1, 4, 4}), D({1, 1, 3, 3}), D(), 2, 1), ConfigError);
}

TEST(Elementwise, Definitions) {
  Tape<double> tape(false);
  EXPECT_EQ(ops::sigmoid(tape, D({1}, 0.0)).item(), 0.5);
  auto r = ops::relu(tape, D({2}, {-3.0, 3.0}));
  EXPECT_EQ(r.data()[0], 0.0);
  EXPECT_EQ(r.data()[1], 3.0);
  EXPECT_EQ(ops::scale(tape, D({1}, 2.0), 1.5).item(), 3.0);
  EXPECT_NEAR(ops::log(tape, D({1}, std::exp(2.0))).item(), 2.0, 1e-15);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  Tape<double> tape(false);
  EXPECT_THROW(ops::log(tape, D({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(ops::log(tape, D({1}, -1.0)), DomainError);
}

TEST(Elementwise, SigmoidLocalGradient) {
  Tape<double> tape;
  auto x = D({3}, {-2.0, 0.0, 1.5}, true);
  auto s = ops::sigmoid(tape, x);
  auto loss = ops::reduce(tape, ops::Reduce::kSum, s);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], s.data()[i] * (1 - s.data()[i]), 1e-15);
}

TEST(Broadcast, ChannelVectorOverNCHW) {
  Tape<double> tape(false);
  auto x = random_tensor({2, 3, 4, 5}, 4);
  auto v = random_tensor({3}, 5);
  auto y = ops::add(tape, x, v);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) EXPECT_EQ(at4(y, n, c, i, j), at4(x, n, c, i, j) + v.data()[c]);
}

TEST(Broadcast, SizeOneDimsAndScalar) {
  Tape<double> tape(false);
  auto x = random_tensor({2, 3, 2, 2}, 6);
  auto g = random_tensor({2, 3, 1, 1}, 7);
  auto m = random_tensor({2, 1, 2, 2}, 8);
  auto y = ops::mul(tape, x, g);
  auto z = ops::sub(tape, x, m);
  auto s = ops::add(tape, x, D({1}, 2.0));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          EXPECT_EQ(at4(y, n, c, i, j), at4(x, n, c, i, j) * g.data()[n * 3 + c]);
          EXPECT_EQ(at4(z, n, c, i, j), at4(x, n, c, i, j) - m.data()[(n * 2 + i) * 2 + j]);
          EXPECT_EQ(at4(s, n, c, i, j), at4(x, n, c, i, j) + 2.0);
        }
}

TEST(Broadcast, MismatchIsShapeError) {
  Tape<double> tape(false);
  EXPECT_THROW(ops::add(tape, D({2, 3}), D({3, 2})), ShapeError);
  EXPECT_THROW(ops::add(tape, D({2, 3, 4, 4}), D({4})), ShapeError);
  EXPECT_THROW(ops::mul(tape, D({2, 3}), D({2, 3, 1})), ShapeError);
}

TEST(Softmax, Examples) {
  Tape<double> tape(false);
  auto a = ops::softmax(tape, D({2}, {0.0, 0.0}), -1);
  EXPECT_EQ(a.data()[0], 0.5);
  EXPECT_EQ(a.data()[1], 0.5);
  auto b = ops::softmax(tape, D({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.data()[i], (i + 1) / 6.0, 1e-15);
}

TEST(Softmax, ShiftInvariantPositiveNormalized) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Tape<double> tape(false);
    auto x = random_tensor({3, 7}, seed, -20, 20);
    auto y = ops::softmax(tape, x, 1);
    auto shifted = ops::softmax(tape, ops::add(tape, x, D({1}, 123.0)), 1);
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int j = 0; j < 7; ++j) {
        EXPECT_GT(y.data()[r * 7 + j], 0.0);
        EXPECT_NEAR(shifted.data()[r * 7 + j], y.data()[r * 7 + j], 1e-12);
        s += y.data()[r * 7 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  Tape<double> tape(false);
  auto big = ops::softmax(tape, D({2}, {1000.0, 0.0}), 0);
  EXPECT_TRUE(std::isfinite(big.data()[0]) && std::isfinite(big.data()[1]));
}

TEST(Reduce, SumMeanMax) {
  Tape<double> tape(false);
  EXPECT_EQ(ops::reduce(tape, ops::Reduce::kSum, D({2, 3}, 1.0)).item(), 6.0);
  auto x = random_tensor({4, 5}, 9);
  const double sum = ops::reduce(tape, ops::Reduce::kSum, x).item();
  EXPECT_NEAR(ops::reduce(tape, ops::Reduce::kMean, x).item(), sum / 20.0, 1e-15);
  auto m = ops::reduce(tape, ops::Reduce::kMean, x, 1);
  ASSERT_EQ(m.shape(), (Shape{4}));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += x.data()[i * 5 + j];
    EXPECT_NEAR(m.data()[i], s / 5, 1e-15);
  }
}

TEST(Reduce, MaxGradientIsOneHotFirstOnTies) {
  {
    Tape<double> tape;
    auto x = D({3}, {1.0, 5.0, 3.0}, true);
    auto y = ops::reduce(tape, ops::Reduce::kMax, x, 0);
    EXPECT_EQ(y.item(), 5.0);
    tape.backward(y);
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));
  }
  {
    Tape<double> tape;
    auto x = D({2, 3}, {2.0, 7.0, 7.0, 4.0, 4.0, 1.0}, true);
    auto y = ops::reduce(tape, ops::Reduce::kSum, ops::reduce(tape, ops::Reduce::kMax, x, 1));
    tape.backward(y);
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 1, 0, 0}));
  }
}

TEST(ReshapePermute, RoundTripsAreBitwise) {
  Tape<double> tape(false);
  auto x = random_tensor({2, 3, 4, 4}, 11);
  auto back = ops::reshape(tape, ops::reshape(tape, x, {2, 3, 16}), {2, 3, 4, 4});
  EXPECT_EQ(std::vector<double>(back.data().begin(), back.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  auto y = random_tensor({2, 3, 5}, 12);
  auto twice = ops::permute(tape, ops::permute(tape, y, {0, 2, 1}), {0, 2, 1});
  EXPECT_EQ(std::vector<double>(twice.data().begin(), twice.data().end()),
            std::vector<double>(y.data().begin(), y.data().end()));
  auto p = ops::permute(tape, x, {0, 2, 3, 1});
  auto inv = ops::permute(tape, p, {0, 3, 1, 2});
  EXPECT_EQ(std::vector<double>(inv.data().begin(), inv.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 4; ++c)
        for (int d = 0; d < 4; ++d) EXPECT_EQ(at4(p, a, c, d, b), at4(x, a, b, c, d));
}

TEST(ReshapePermute, CountMismatchIsShapeError) {
  Tape<double> tape(false);
  EXPECT_THROW(ops::reshape(tape, D({2, 3}), {4, 2}), ShapeError);
  EXPECT_THROW(ops::permute(tape, D({2, 3}), {0, 0}), ShapeError);
}

TEST(Gather, Examples) {
  Tape<double> tape(false);
  auto x = D({3}, {10, 20, 30});
  auto id = ops::gather_lastdim(tape, x, IndexTensor({3}, {0, 1, 2}));
  EXPECT_EQ(std::vector<double>(id.data().begin(), id.data().end()), (std::vector<double>{10, 20, 30}));
  auto g = ops::gather_lastdim(tape, x, IndexTensor({2}, {2, 0}));
  EXPECT_EQ(std::vector<double>(g.data().begin(), g.data().end()), (std::vector<double>{30, 10}));
}

TEST(Gather, BackwardScatterAdds) {
  Tape<double> tape;
  auto x = D({3}, {10, 20, 30}, true);
  auto y = ops::reduce(tape, ops::Reduce::kSum, ops::gather_lastdim(tape, x, IndexTensor({2}, {2, 0})));
  tape.backward(y);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 1}));
}

TEST(Gather, OutOfRangeIsIndexError) {
  Tape<double> tape(false);
  EXPECT_THROW(ops::gather_lastdim(tape, D({3}), IndexTensor({1}, {3})), IndexError);
  EXPECT_THROW(ops::gather_lastdim(tape, D({3}), IndexTensor({1}, {-1})), IndexError);
}

TEST(Gather, AdjointOfScatter) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 3, 6}, seed, -1, 1, true);
    std::vector<int64_t> idx(2 * 4);
    for (auto& i : idx) i = static_cast<int64_t>(rng() % 6);
    auto u = random_tensor({2, 3, 4}, seed + 50);
    Tape<double> tape;
    auto g = ops::gather_lastdim(tape, x, IndexTensor({2, 4}, idx));
    double lhs = 0;
    for (int64_t i = 0; i < g.numel(); ++i) lhs += g.data()[i] * u.data()[i];
    auto loss = ops::reduce(tape, ops::Reduce::kSum, ops::mul(tape, g, u));
    tape.backward(loss);  // x.grad = scatter(u, idx)
    double rhs = 0;
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * x.grad()[i];
    EXPECT_NEAR(lhs, rhs, 1e-6);
  }
}

TEST(Upsample, ConstantAndIdentity) {
  Tape<double> tape(false);
  auto c = ops::upsample_bilinear(tape, D({1, 2, 3, 3}, 5.0), 2);
  ASSERT_EQ(c.shape(), (Shape{1, 2, 6, 6}));
  for (double v : c.data()) EXPECT_EQ(v, 5.0);
  auto x = random_tensor({1, 1, 3, 4}, 13);
  auto same = ops::upsample_bilinear(tape, x, 1);
  EXPECT_EQ(std::vector<double>(same.data().begin(), same.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Upsample, TwoByTwoHandInterpolation) {
  Tape<double> tape(false);
  const double a = 1, b = 2, c = 3, d = 5;
  auto y = ops::upsample_bilinear(tape, D({1, 1, 2, 2}, {a, b, c, d}), 2);
  // Half-pixel source coordinate (i + 0.5)/2 − 0.5, clamped to the edge:
  // rows/cols 0..3 take weights (1,0), (.75,.25), (.25,.75), (0,1).
  const double wt[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
  const double src[2][2] = {{a, b}, {c, d}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double v = 0;
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) v += wt[i][p] * wt[j][q] * src[p][q];
      EXPECT_NEAR(at4(y, 0, 0, i, j), v, 1e-15) << i << "," << j;
    }
}

TEST(Backward, SumAndSquare) {
  {
    Tape<double> tape;
    auto x = random_tensor({2, 3}, 14, -1, 1, true);
    auto loss = ops::reduce(tape, ops::Reduce::kSum, x);
    tape.backward(loss);
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  }
  {
    Tape<double> tape;
    auto x = random_tensor({2, 3}, 15, -1, 1, true);
    auto loss = ops::reduce(tape, ops::Reduce::kSum, ops::mul(tape, x, x));
    tape.backward(loss);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.data()[i], 1e-15);
  }
}

TEST(Backward, UsageErrors) {
  auto x = random_tensor({2, 3}, 16, -1, 1, true);
  {
    Tape<double> tape;
    auto y = ops::scale(tape, x, 2.0);
    EXPECT_THROW(tape.backward(y), UsageError);
  }
  {
    Tape<double> tape;
    auto loss = ops::reduce(tape, ops::Reduce::kSum, x);
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), UsageError);
  }
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  auto x = random_tensor({3}, 17, -1, 1, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    auto loss = ops::reduce(tape, ops::Reduce::kSum, x);
    tape.backward(loss);
  }
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, CompositeConvReluMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 5, 5}, 18, -1, 1, true);
  auto w = random_tensor({3, 2, 3, 3}, 19, -1, 1, true);
  auto f = [](Tape<double>& t, const std::vector<D>& in) {
    return ops::reduce(t, ops::Reduce::kSum, ops::relu(t, ops::conv2d(t, in[0], in[1], D(), 1, 1)));
  };
  GradCheckOptions o;
  o.eps = 1e-6;
  o.tol = 1e-5;
  auto r = grad_check(f, {x, w}, o, "conv_relu");
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto x = random_tensor({4, 3}, 20, -1, 1, true);
  auto w = random_tensor({3, 2}, 21);
  auto f = [w](Tape<double>& t, const std::vector<D>& in) { return ops::linear(t, in[0], w, D()); };
  auto r = grad_check(f, {x}, {}, "linear");
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_err, 1e-10);
}

TEST(GradCheck, SigmoidOfMatmul) {
  auto a = random_tensor({3, 4}, 22, -1, 1, true);
  auto b = random_tensor({4, 2}, 23, -1, 1, true);
  auto f = [](Tape<double>& t, const std::vector<D>& in) { return ops::sigmoid(t, ops::matmul(t, in[0], in[1])); };
  GradCheckOptions o;
  o.tol = 1e-5;
  auto r = grad_check(f, {a, b}, o, "sigmoid_matmul");
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(GradCheck, CorruptedBackwardFailsAndNamesCoordinate) {
  auto a = random_tensor({2, 3}, 24, -1, 1, true);
  auto b = random_tensor({3, 2}, 25, -1, 1, true);
  auto f = [](Tape<double>& t, const std::vector<D>& in) { return ops::matmul(t, in[0], in[1]); };
  testing::inject_backward_fault("matmul");
  auto r = grad_check(f, {a, b}, {}, "matmul");
  testing::clear_backward_faults();
  EXPECT_FALSE(r.passed);
  ASSERT_FALSE(r.failures.empty());
  EXPECT_NE(r.summary().find("coord"), std::string::npos);
  EXPECT_TRUE(grad_check(f, {a, b}, {}, "matmul").passed);
}

// Every kernel against central differences, 20 seeds each.
TEST(GradCheck, AllOpsTwentySeeds) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    GradCheckConfig cfg;
    cfg.eps = 1e-5;
    cfg.tol = 1e-5;
    cfg.seed = seed;
    for (const auto& op : check_ops(cfg)) {
      EXPECT_TRUE(op.passed) << "seed " << seed << " op " << op.op << " max_rel_err " << op.max_rel_err;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  auto p = random_tensor<float>({5}, 26, -1, 1, true);
  const auto before = std::vector<float>(p.data().begin(), p.data().end());
  p.grad();
  AdamState<float> st;
  st.lr = 1e-3;
  std::vector<Tensor<float>> ps{p};
  adam_step(std::span(ps), st);
  EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), before);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepHandComputation) {
  Tensor<double> p({1}, 0.0, true);
  p.grad()[0] = 1.0;
  AdamState<double> st;
  st.lr = 1e-3;
  std::vector<Tensor<double>> ps{p};
  adam_step(std::span(ps), st);
  // m̂ = v̂ = 1 so Δp = −lr/(1 + eps).
  EXPECT_NEAR(p.item(), -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsHandUnrolled) {
  Tensor<double> p({1}, 0.5, true);
  AdamState<double> st;
  st.lr = 1e-2;
  std::vector<Tensor<double>> ps{p};
  double ref = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    p.zero_grad();
    p.grad()[0] = 1.0;
    adam_step(std::span(ps), st);
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p.item(), ref, 1e-12);
}

TEST(Adam, BitwiseDeterministic) {
  auto run = [] {
    auto p = random_tensor<float>({7}, 27, -1, 1, true);
    AdamState<float> st;
    st.lr = 1e-2;
    std::vector<Tensor<float>> ps{p};
    for (int s = 0; s < 5; ++s) {
      p.zero_grad();
      for (int i = 0; i < 7; ++i) p.grad()[i] = std::sin(static_cast<float>(i + s));
      adam_step(std::span(ps), st);
    }
    return std::vector<float>(p.data().begin(), p.data().end());
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace ufo
