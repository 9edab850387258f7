#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dvme/gradcheck.hpp"
#include "dvme/numerics.hpp"
#include "dvme/rng.hpp"
#include "oracles.hpp"

using namespace dvme;

namespace {

TensorD random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  TensorD t({r, c});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_EQ(Tensor({2, 3}).size(), 6u);
}

TEST(Tensor, RequireFiniteNamesTheElement) {
  Tensor t({2, 2});
  t[3] = std::nanf("");
  try {
    require_finite(t, "activations");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("activations"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// matmul

TEST(Matmul, Identity) {
  const auto a = TensorD::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(nn::matmul(a, TensorD::identity(2)), a);
  const auto col = TensorD::matrix(2, 1, {5, 7});
  EXPECT_EQ(nn::matmul(TensorD::identity(2), col), col);
}

TEST(Matmul, MatchesTripleLoopExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2);
    EXPECT_EQ(nn::matmul(a, b), oracle::matmul(a, b));
    const auto at = oracle::transpose(a);
    EXPECT_EQ(nn::matmul_tn(at, b), oracle::matmul(a, b));
    const auto bt = oracle::transpose(b);
    EXPECT_EQ(nn::matmul_nt(a, bt), oracle::matmul(a, b));
  }
}

TEST(Matmul, ShapeMismatch) {
  EXPECT_THROW(nn::matmul(TensorD({2, 3}), TensorD({2, 3})), DimensionError);
}

// ---------------------------------------------------------------------------
// linear

TEST(Linear, ZeroInputGivesBias) {
  const auto b = TensorD::vector({1.5, -2});
  const auto y = nn::linear_forward(TensorD({3, 4}), TensorD({4, 2}, 0.3), b);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y(r, 0), 1.5);
    EXPECT_EQ(y(r, 1), -2.0);
  }
}

TEST(Linear, IdentityWeight) {
  Rng rng(2);
  const auto x = random_matrix(rng, 3, 3);
  EXPECT_EQ(nn::linear_forward(x, TensorD::identity(3), TensorD({3})), x);
}

TEST(Linear, BackwardFormulas) {
  Rng rng(3);
  const auto x = random_matrix(rng, 4, 3), w = random_matrix(rng, 3, 2), dy = random_matrix(rng, 4, 2);
  const auto g = nn::linear_backward(x, w, dy, true);
  EXPECT_EQ(g.dw, oracle::matmul(oracle::transpose(x), dy));
  EXPECT_EQ(g.dx, oracle::matmul(dy, oracle::transpose(w)));
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += dy(i, j);
    EXPECT_DOUBLE_EQ(g.db[j], s);
  }
}

TEST(Linear, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(4);
  auto x = random_matrix(rng, 3, 4), w = random_matrix(rng, 4, 2);
  TensorD b({2});
  const TensorD ones({3, 2}, 1.0);
  const auto g = nn::linear_backward(x, w, ones, true);
  const auto r = gradcheck([&] { return dot(nn::linear_forward(x, w, b), ones); },
                           {{"w", &w, &g.dw}, {"b", &b, &g.db}, {"x", &x, &g.dx}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---------------------------------------------------------------------------
// softmax

TEST(Softmax, UniformRow) {
  const auto y = nn::softmax_rows(TensorD::matrix(1, 3, {0, 0, 0}));
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  const auto a = nn::softmax_rows(TensorD::matrix(1, 2, {1, 2}));
  const auto b = nn::softmax_rows(TensorD::matrix(1, 2, {101, 102}));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Softmax, RowsSumToOneAndAreMonotone) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    auto x = random_matrix(rng, 3, 6);
    for (double& v : x.values()) v *= 20.0;
    const auto y = nn::softmax_rows(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) s += y(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6);
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t d = 0; d < 6; ++d)
          if (x(r, c) > x(r, d)) EXPECT_GE(y(r, c), y(r, d));
    }
  }
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  Rng rng(6);
  auto x = random_matrix(rng, 2, 4);
  const auto w = random_matrix(rng, 2, 4);
  const auto dx = nn::softmax_rows_backward(nn::softmax_rows(x), w);
  const auto r = gradcheck([&] { return dot(nn::softmax_rows(x), w); }, {{"x", &x, &dx}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---------------------------------------------------------------------------
// layernorm

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  const auto y = nn::layernorm_forward(TensorD({2, 4}, 3.25), TensorD({4}, 1.0), TensorD({4})).y;
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  Rng rng(7);
  const auto beta = TensorD::vector({0.5, -1, 2});
  const auto y = nn::layernorm_forward(random_matrix(rng, 4, 3), TensorD({3}), beta).y;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y(r, c), beta[c]);
}

TEST(LayerNorm, PreAffineMomentsOnRandomRows) {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    auto x = random_matrix(rng, 5, 16);
    for (double& v : x.values()) v = 3.0 * v + 7.0;
    const auto xh = nn::layernorm_forward(x, TensorD({16}, 1.0), TensorD({16})).cache.xhat;
    for (std::size_t r = 0; r < 5; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 16; ++c) m += xh(r, c);
      m /= 16;
      for (std::size_t c = 0; c < 16; ++c) v += (xh(r, c) - m) * (xh(r, c) - m);
      v /= 16;
      EXPECT_LT(std::abs(m), 1e-5);
      EXPECT_NEAR(v, 1.0, 1e-4);
    }
  }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  auto x = random_matrix(rng, 3, 5);
  TensorD gamma({5}), beta({5});
  for (std::size_t i = 0; i < 5; ++i) {
    gamma[i] = 1.0 + 0.5 * rng.normal();
    beta[i] = rng.normal();
  }
  const auto w = random_matrix(rng, 3, 5);
  const auto g = nn::layernorm_backward(nn::layernorm_forward(x, gamma, beta).cache, gamma, w);
  const auto r = gradcheck([&] { return dot(nn::layernorm_forward(x, gamma, beta).y, w); },
                           {{"x", &x, &g.dx}, {"gamma", &gamma, &g.dgamma}, {"beta", &beta, &g.dbeta}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// ---------------------------------------------------------------------------
// relu / dropout

TEST(Relu, Clamps) {
  EXPECT_EQ(nn::relu(TensorD::vector({-1, 0, 2})), TensorD::vector({0, 0, 2}));
  EXPECT_EQ(nn::relu_backward(TensorD::vector({-1, 0, 2}), TensorD::vector({5, 5, 5})),
            TensorD::vector({0, 0, 5}));
}

TEST(Dropout, EvalIsIdentity) {
  Rng rng(10);
  const auto x = random_matrix(rng, 4, 4).cast<float>();
  CounterStream s(1);
  const auto out = nn::dropout(x, 0.2, nn::Mode::eval, s);
  EXPECT_EQ(out.y, x);
  EXPECT_TRUE(out.mask.empty());
  EXPECT_EQ(s.position(), 0u);
}

TEST(Dropout, RejectsInvalidProbability) {
  CounterStream s;
  EXPECT_THROW(nn::dropout(TensorD({2}), 1.0, nn::Mode::train, s), ParameterError);
  EXPECT_THROW(nn::dropout(TensorD({2}), -0.1, nn::Mode::train, s), ParameterError);
}

TEST(Dropout, TrainModeMeanMatchesInput) {
  CounterStream s(12345);
  const auto out = nn::dropout(TensorD({100000}, 1.0), 0.2, nn::Mode::train, s);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : out.y.values()) {
    mean += v;
    zeros += v == 0.0;
    if (v != 0.0) EXPECT_DOUBLE_EQ(v, 1.25);
  }
  mean /= 100000.0;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, 0.2, 0.01);
}

TEST(Dropout, BackwardReusesMask) {
  CounterStream s(3);
  const auto out = nn::dropout(TensorD({50}, 1.0), 0.5, nn::Mode::train, s);
  const auto dx = nn::dropout_backward(out.mask, TensorD({50}, 1.0));
  EXPECT_EQ(dx, out.y);
}

// ---------------------------------------------------------------------------
// cross-entropy

TEST(CrossEntropy, UniformBinaryIsLn2) {
  const std::vector<int> y{0, 1};
  const auto ce = nn::cross_entropy(TensorD({2, 2}, 0.3), y);
  EXPECT_NEAR(ce.loss, std::numbers::ln2, 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectIsNearZero) {
  const std::vector<int> y{1};
  const auto ce = nn::cross_entropy(TensorD::matrix(1, 3, {0, 1000, 0}), y);
  EXPECT_LT(ce.loss, 1e-12);
  EXPECT_TRUE(std::isfinite(nn::cross_entropy(TensorD::matrix(1, 3, {1000, 0, 0}), y).loss));
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHotOverBatch) {
  Rng rng(13);
  auto logits = random_matrix(rng, 4, 3);
  const std::vector<int> y{0, 2, 1, 2};
  const auto ce = nn::cross_entropy(logits, y);
  const auto p = nn::softmax_rows(logits);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_NEAR(ce.dlogits(i, c), (p(i, c) - (y[i] == static_cast<int>(c))) / 4.0, 1e-15);
  const auto r = gradcheck([&] { return nn::cross_entropy(logits, y).loss; },
                           {{"logits", &logits, &ce.dlogits}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  const std::vector<int> y{3};
  EXPECT_THROW(nn::cross_entropy(TensorD({1, 3}), y), ParameterError);
}

// ---------------------------------------------------------------------------
// gradcheck

TEST(Gradcheck, SumOfSquaresIsExactToRounding) {
  Rng rng(14);
  auto theta = random_matrix(rng, 3, 3);
  TensorD analytic = theta;
  for (double& v : analytic.values()) v *= 2.0;
  const auto r = gradcheck([&] { return dot(theta, theta); }, {{"theta", &theta, &analytic}});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.checked, 9u);
}

TEST(Gradcheck, ReportsWorstTensor) {
  TensorD a({2}, 1.0), b({2}, 1.0);
  const TensorD ga({2}, 2.0);
  const TensorD gb({2}, -2.0);  // wrong sign
  const auto r = gradcheck([&] { return dot(a, a) + dot(b, b); }, {{"a", &a, &ga}, {"b", &b, &gb}});
  EXPECT_EQ(r.worst_tensor, "b");
  EXPECT_FALSE(r.passed(1e-4));
}

TEST(Gradcheck, NonFiniteObjectiveThrows) {
  TensorD a({1}, 1.0);
  const TensorD g({1});
  EXPECT_THROW(gradcheck([] { return std::nan(""); }, {{"a", &a, &g}}), NumericError);
}

// ---------------------------------------------------------------------------
// RNG streams

TEST(Rng, DeterministicAndIndependentStreams) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(0, 1));
}

TEST(Rng, BelowIsInRangeAndRoughlyUniform) {
  Rng r(77);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}
