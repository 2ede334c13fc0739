#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "persona/numerics.hpp"

namespace {

using persona::ContractViolation;
using persona::NumericError;
using namespace persona::numerics;

using T = Tensor<double>;
using V = Var<double>;

TEST(Backward, SquareAtThree) {
  T x = T::scalar(3.0);
  Tape<double> tape;
  V xv = tape.param(x);
  V y = mul(xv, xv);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.gradient(x)[0], 6.0);
}

TEST(Backward, AccumulatesAcrossUses) {
  T x = T::scalar(1.0);
  Tape<double> tape;
  V xv = tape.param(x);
  tape.backward(add(xv, xv));
  EXPECT_DOUBLE_EQ(tape.gradient(x)[0], 2.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  T x = T::vector({1.0, 2.0});
  Tape<double> tape;
  V y = scale(tape.param(x), 2.0);
  EXPECT_THROW(tape.backward(y), ContractViolation);
}

TEST(Backward, UnreachableTensorGetsZeroGradient) {
  T used = T::vector({0.3, -0.2});
  T unused = T::vector({1.0, 1.0});
  Tape<double> tape;
  V a = tape.param(used);
  V b = tape.param(unused);
  (void)tanh(b);  // recorded but not on the path to the loss
  tape.backward(dot(a, a));
  unused.zero_grad();
  tape.accumulate_into(unused);
  for (double g : unused.grad) EXPECT_EQ(g, 0.0);
}

TEST(Backward, AccumulateIntoIsAdditive) {
  T x = T::scalar(2.0);
  x.zero_grad();
  for (int i = 0; i < 3; ++i) {
    Tape<double> tape;
    V xv = tape.param(x);
    tape.backward(mul(xv, xv));
    tape.accumulate_into(x);
  }
  EXPECT_DOUBLE_EQ(x.grad[0], 12.0);
}

TEST(Softmax, UniformOnEqualLogits) {
  Tape<double> tape;
  auto p = softmax(tape.constant({0, 0, 0})).value();
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LogLinearLogits) {
  Tape<double> tape;
  auto p = softmax(tape.constant({std::log(1.0), std::log(2.0), std::log(3.0)})).value();
  EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape<double> tape;
  auto p = softmax(tape.constant({1000, 0})).value();
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
}

TEST(Softmax, EmptyInputIsRejected) {
  Tape<double> tape;
  EXPECT_THROW(softmax(tape.constant({})), ContractViolation);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(1 + trial % 17);
    for (auto& v : logits) v = normal(rng);
    std::vector<double> shifted = logits;
    const double c = normal(rng) * 10;
    for (auto& v : shifted) v += c;
    Tape<double> tape;
    auto p = softmax(tape.constant(logits)).value();
    auto q = softmax(tape.constant(shifted)).value();
    double total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-12);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, CertainPrediction) {
  Tape<double> tape;
  EXPECT_NEAR(cross_entropy(tape.constant({1, 0, 0}), 0).scalar(), 0.0, 1e-11);
}

TEST(CrossEntropy, UniformOverFour) {
  Tape<double> tape;
  V p = tape.constant({0.25, 0.25, 0.25, 0.25});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(cross_entropy(p, k).scalar(), 1.386294, 1e-6);
}

TEST(CrossEntropy, TargetOutOfRange) {
  Tape<double> tape;
  EXPECT_THROW(cross_entropy(tape.constant({0.5, 0.5}), 2), ContractViolation);
}

TEST(Maxout, PoolsConsecutiveGroups) {
  Tape<double> tape;
  auto out = maxout(tape.constant({1, 5, 2, 2}), 2).value();
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], 5.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(Maxout, TieRoutesGradientToFirstMaximum) {
  T u = T::vector({2.0, 2.0});
  Tape<double> tape;
  tape.backward(maxout(tape.param(u), 2));
  auto g = tape.gradient(u);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(FiniteDifference, SquareIsExact) {
  T x = T::scalar(3.0);
  std::vector<NamedTensor<double>> params{{"x", &x}};
  auto report = finite_difference_check<double>([&](Tape<double>& t) {
    V v = t.param(x);
    return mul(v, v);
  }, params);
  EXPECT_LT(report.max_relative_error, 1e-9);
  EXPECT_EQ(report.checked, 1u);
}

TEST(FiniteDifference, SoftmaxCrossEntropyOfLinearMap) {
  std::mt19937_64 rng(5);
  T w = T::zeros({4, 3});
  w.fill_uniform(rng, -0.5, 0.5);
  T x = T::vector({0.7, -1.1, 0.4});
  std::vector<NamedTensor<double>> params{{"W", &w}, {"x", &x}};
  auto report = finite_difference_check<double>([&](Tape<double>& t) {
    return cross_entropy(softmax(matvec(t.param(w), t.param(x))), 2);
  }, params);
  EXPECT_LT(report.max_relative_error, 1e-6);
  EXPECT_EQ(report.skipped_non_smooth, 0u);
}

TEST(FiniteDifference, HardMaxTieIsSkipped) {
  T u = T::vector({1.5, 1.5});
  std::vector<NamedTensor<double>> params{{"u", &u}};
  auto report = finite_difference_check<double>([&](Tape<double>& t) { return maxout(t.param(u), 2); }, params);
  EXPECT_EQ(report.skipped_non_smooth, 2u);
  EXPECT_EQ(report.checked, 0u);
}

TEST(FiniteDifference, NonFiniteLossNamesParameter) {
  T x = T::scalar(1.0);
  std::vector<NamedTensor<double>> params{{"blowup", &x}};
  try {
    finite_difference_check<double>([&](Tape<double>& t) {
      V v = t.param(x);
      // Finite at x=1, infinite as soon as x moves.
      const double s = t.value(v.id)[0] == 1.0 ? 1.0 : std::numeric_limits<double>::infinity();
      return scale(v, s);
    }, params);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blowup"), std::string::npos);
  }
}

// Every primitive against central differences at random points.
TEST(GradientProperty, AllPrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    T a = T::zeros({5});
    T b = T::zeros({5});
    T w = T::zeros({5, 5});
    T table = T::zeros({4, 5});
    T pool = T::zeros({6});
    for (T* t : {&a, &b, &w, &table}) t->fill_uniform(rng, -1.0, 1.0);
    // Well-separated values so maxout sits away from ties.
    for (std::size_t i = 0; i < pool.size(); ++i) pool.values[i] = static_cast<double>((i * 7) % 6) * 0.3 + 0.01 * trial;
    std::vector<NamedTensor<double>> params{{"a", &a}, {"b", &b}, {"w", &w}, {"table", &table}, {"pool", &pool}};
    auto report = finite_difference_check<double>([&](Tape<double>& t) {
      V va = t.param(a), vb = t.param(b);
      V h = tanh(add(matvec(t.param(w), va), mul(vb, sigmoid(va))));
      V e = lookup(t.param(table), 2);
      V k = one_minus(sub(h, scale(e, 0.5)));
      std::vector<V> parts{va, k, e};
      V mixed = weighted_sum(softmax(concat<double>({dot(va, vb), dot(k, e), dot(h, h)})),
                             std::span<const V>(parts));
      V pooled = maxout(t.param(pool), 2);
      std::vector<V> terms{mixed, vb};
      V total = concat<double>({mean(std::span<const V>(terms)), pooled});
      return cross_entropy(softmax(total), 3);
    }, params);
    EXPECT_LT(report.max_relative_error, 1e-6) << "trial " << trial;
    EXPECT_EQ(report.skipped_non_smooth, 0u);
  }
}

TEST(Tape, ReplayReproducesForwardBitForBit) {
  std::mt19937_64 rng(3);
  T w = T::zeros({3, 3});
  w.fill_uniform(rng, -1, 1);
  T x = T::vector({0.1, 0.2, 0.3});
  Tape<double> tape;
  V out = softmax(tanh(matvec(tape.param(w), tape.param(x))));
  std::vector<double> before(out.value().begin(), out.value().end());
  tape.replay();
  std::vector<double> after(out.value().begin(), out.value().end());
  EXPECT_EQ(before, after);

  // Replay picks up parameter changes.
  w.values[0] += 0.5;
  tape.replay();
  EXPECT_NE(before, std::vector<double>(out.value().begin(), out.value().end()));
}

TEST(Tape, DeterministicAcrossRecords) {
  auto run = [] {
    std::mt19937_64 rng(99);
    T w = T::zeros({4, 4});
    w.fill_uniform(rng, -1, 1);
    T x = T::vector({1, 2, 3, 4});
    Tape<double> tape;
    auto v = sigmoid(matvec(tape.param(w), tape.param(x))).value();
    return std::vector<double>(v.begin(), v.end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, SinglePrecisionForward) {
  Tensor<float> x = Tensor<float>::vector({1.0f, 2.0f});
  Tape<float> tape;
  auto p = softmax(tape.param(x)).value();
  EXPECT_NEAR(p[0] + p[1], 1.0f, 1e-6f);
}

TEST(Tape, MismatchedShapesAreContractViolations) {
  Tape<double> tape;
  V a = tape.constant({1, 2});
  V b = tape.constant({1, 2, 3});
  EXPECT_THROW(add(a, b), ContractViolation);
  T w = T::zeros({2, 3});
  EXPECT_THROW(matvec(tape.param(w), a), ContractViolation);
}

}  // namespace
