#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ps2/tensor.hpp"
#include "test_support.hpp"

namespace ps2 {
namespace {

using testing::central_difference;
using testing::random_tensor;
using testing::relative_error;
using T = Tensor<double>;

void expect_values(const T& t, std::vector<double> expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(t.data()[i], expected[i], tol) << "at " << i;
  }
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  T eye({2, 2}, {1, 0, 0, 1});
  T b({2, 2}, {3, 4, 5, 6});
  expect_values(matmul(eye, b), {3, 4, 5, 6});
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(T({1, 2}, {1, 2}), T({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  auto a = random_tensor({5, 7}, rng);
  auto b = random_tensor({7, 3}, rng);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 7; ++k) acc += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), acc, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(T::zeros({2, 3}), T::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(Concat, Vectors) { expect_values(concat(T({2}, {1, 2}), T({1}, {3}), 0), {1, 2, 3}); }

TEST(Concat, ShapeLawAlongColumns) {
  auto c = concat(T::zeros({2, 3}), T::zeros({2, 5}), 1);
  EXPECT_EQ(c.shape(), (Shape{2, 8}));
}

TEST(Concat, InterleavesRowsAlongAxisOne) {
  auto c = concat(T({2, 1}, {1, 2}), T({2, 2}, {3, 4, 5, 6}), 1);
  expect_values(c, {1, 3, 4, 2, 5, 6});
}

TEST(Concat, IncompatibleShapesRejected) {
  EXPECT_THROW(concat(T::zeros({2, 3}), T::zeros({3, 3}), 1), DimensionError);
}

TEST(Concat, GradientOfSumIsOnes) {
  Tape<double> tape;
  auto a = T::zeros({2, 3}, true);
  auto b = T::zeros({2, 2}, true);
  auto loss = sum(concat(a, b, 1));
  tape.backward(loss);
  for (auto g : a.grad()) EXPECT_EQ(g, 1.0);
  for (auto g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Relu, ClampsNegatives) { expect_values(relu(T({3}, {-1, 0, 2})), {0, 0, 2}); }

TEST(Relu, IdentityOnPositiveInput) { expect_values(relu(T({3}, {0.5, 1, 9})), {0.5, 1, 9}); }

TEST(Relu, FiniteDifferenceAgreement) {
  auto x = T({2}, {-0.5, 0.3}, true);
  std::vector<double> analytic;
  {
    Tape<double> tape;
    auto loss = sum(mul(relu(x), relu(x)));
    tape.backward(loss);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  auto f = [&] { return sum(mul(relu(x), relu(x))).item(); };
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT(relative_error(analytic[i], central_difference(x, i, f)), 1e-6);
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  expect_values(softmax(T({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
}

TEST(Softmax, SingleElementIsOne) { expect_values(softmax(T({1}, {42}), 0), {1}); }

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto y = softmax(T({2}, {1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(y.data()[0]));
  EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({6, 9}, rng, -50, 50);
    for (std::size_t axis : {0u, 1u}) {
      auto y = softmax(x, axis);
      const std::size_t other = axis == 0 ? 9 : 6;
      for (std::size_t o = 0; o < other; ++o) {
        double s = 0;
        for (std::size_t l = 0; l < x.dim(axis); ++l) s += axis == 0 ? y.at({l, o}) : y.at({o, l});
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Reduce, MaxAlongRows) {
  expect_values(reduce(T({2, 2}, {1, 5, 2, 0}), 0, ReduceMode::max), {2, 5});
}

TEST(Reduce, MeanOfVector) {
  auto m = reduce(T({2}, {2, 4}), 0, ReduceMode::mean);
  EXPECT_EQ(m.rank(), 0u);
  EXPECT_EQ(m.item(), 3.0);
}

TEST(Reduce, MaxTieRoutesGradientToLowestIndex) {
  Tape<double> tape;
  auto x = T({2}, {3, 3}, true);
  tape.backward(reduce(x, 0, ReduceMode::max));
  expect_values(T({2}, {x.grad()[0], x.grad()[1]}), {1, 0});
}

TEST(Reduce, AxisOutOfRange) {
  EXPECT_THROW(reduce(T::zeros({2, 2}), 2, ReduceMode::sum), DimensionError);
}

TEST(Reduce, MeanTimesLengthEqualsSum) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({4, 5, 6}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto m = reduce(x, axis, ReduceMode::mean);
    auto s = reduce(x, axis, ReduceMode::sum);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      EXPECT_NEAR(m.data()[i] * static_cast<double>(x.dim(axis)), s.data()[i], 1e-12);
    }
  }
}

TEST(GatherRows, RepeatedIndexCopiesRow) {
  T x({3, 2}, {1, 2, 3, 4, 5, 6});
  IndexMatrix idx(1, 3);
  idx.data = {1, 1, 1};
  auto g = gather_rows(x, idx);
  EXPECT_EQ(g.shape(), (Shape{1, 3, 2}));
  expect_values(g, {3, 4, 3, 4, 3, 4});
}

TEST(GatherRows, DoubleReferenceReceivesDoubleGradient) {
  Tape<double> tape;
  auto x = T::zeros({3, 2}, true);
  IndexMatrix idx(2, 2);
  idx.data = {0, 2, 2, 1};
  tape.backward(sum(gather_rows(x, idx)));
  expect_values(T({3, 2}, {x.grad().begin(), x.grad().end()}), {1, 1, 1, 1, 2, 2});
}

TEST(GatherRows, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({6, 4}, rng);
  IndexMatrix idx(6, 3);
  std::uniform_int_distribution<std::uint32_t> pick(0, 5);
  for (auto& v : idx.data) v = pick(rng);
  auto g = gather_rows(x, idx);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(g.at({i, k, f}), x.at({idx(i, k), f}));
}

TEST(GatherRows, OutOfRangeIndex) {
  IndexMatrix idx(1, 1);
  idx.data = {3};
  EXPECT_THROW(gather_rows(T::zeros({3, 2}), idx), IndexError);
}

TEST(GatherRows, ScatterConservesGradientMass) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    auto x = random_tensor({10, 3}, rng, -1, 1, true);
    IndexMatrix idx(10, 4);
    std::uniform_int_distribution<std::uint32_t> pick(0, 9);
    for (auto& v : idx.data) v = pick(rng);
    auto g = gather_rows(x, idx);
    auto w = random_tensor(g.shape(), rng);
    tape.backward(sum(mul(g, w)));
    const double in = std::accumulate(x.grad().begin(), x.grad().end(), 0.0);
    const double out = std::accumulate(w.data().begin(), w.data().end(), 0.0);
    EXPECT_NEAR(in, out, 1e-9);
  }
}

TEST(L2Normalize, PythagoreanTriple) { expect_values(l2_normalize(T({2}, {3, 4}), 0, 1e-12), {0.6, 0.8}, 1e-15); }

TEST(L2Normalize, ZeroVectorPreserved) { expect_values(l2_normalize(T({2}, {0, 0}), 0, 1e-12), {0, 0}); }

TEST(L2Normalize, RowsHaveUnitNorm) {
  std::mt19937_64 rng(13);
  auto y = l2_normalize(random_tensor({20, 7}, rng), 1, 1e-12);
  for (std::size_t r = 0; r < 20; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < 7; ++c) ss += y.at({r, c}) * y.at({r, c});
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  auto x = T::zeros({2, 3}, true);
  backward(sum(x));
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ReluOfMatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  auto w = random_tensor({4, 3}, rng, -1, 1, true);
  auto x = random_tensor({3, 2}, rng, -1, 1, true);
  {
    Tape<double> tape;
    tape.backward(sum(relu(matmul(w, x))));
  }
  auto f = [&] { return sum(relu(matmul(w, x))).item(); };
  for (auto* t : {&w, &x}) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    for (std::size_t i = 0; i < t->numel(); ++i) {
      EXPECT_LT(relative_error(analytic[i], central_difference(*t, i, f)), 1e-5);
    }
  }
}

TEST(Backward, SecondCallWithoutForwardIsContractError) {
  Tape<double> tape;
  auto x = T::zeros({2}, true);
  auto loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  EXPECT_THROW(sum(x), ContractError);  // a spent tape records nothing further
}

TEST(Backward, NonScalarLossRejected) {
  Tape<double> tape;
  auto x = T::zeros({2}, true);
  EXPECT_THROW(tape.backward(relu(x)), ContractError);
}

TEST(Backward, IntermediateTensorsReceiveGradients) {
  Tape<double> tape;
  auto x = T({2}, {1, -2}, true);
  auto y = scale(x, 3.0);
  auto z = relu(y);
  tape.backward(sum(z));
  EXPECT_TRUE(y.has_grad());
  EXPECT_TRUE(z.has_grad());
  expect_values(T({2}, {x.grad()[0], x.grad()[1]}), {3, 0});
}

TEST(Backward, NoTapeMeansNoRecording) {
  auto x = T::zeros({2}, true);
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(backward(y), ContractError);
}

TEST(Dropout, ZeroProbabilityIsIdentity) {
  std::mt19937_64 rng(1);
  auto x = T({3}, {1, 2, 3});
  expect_values(dropout(x, 0.0, rng), {1, 2, 3});
}

TEST(Dropout, InvertedScalingPreservesMean) {
  std::mt19937_64 rng(1);
  auto y = dropout(T::full({20000}, 1.0), 0.3, rng);
  std::size_t zeros = 0;
  double total = 0;
  for (auto v : y.data()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-15);
    }
    total += v;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 20000.0, 0.3, 0.02);
  EXPECT_NEAR(total / 20000.0, 1.0, 0.03);
}

TEST(SinglePrecision, OperationsAvailable) {
  Tape<float> tape;
  Tensor<float> a({2, 2}, {1, 2, 3, 4}, true);
  auto loss = sum(softmax(matmul(a, a), 1));
  tape.backward(loss);
  EXPECT_NEAR(loss.item(), 2.0f, 1e-6f);
  EXPECT_TRUE(a.has_grad());
}

// Every differentiable operation against central differences at 100 random
// points. Inputs are kept away from the relu kink so the check measures the
// backward rules, not the non-differentiable point.
TEST(GradientProperty, AllOperationsAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(2024);
  using Fn = std::function<T(const T&, const T&)>;
  struct Case {
    const char* name;
    Shape a, b;
    Fn fn;
  };
  IndexMatrix idx(4, 3);
  idx.data = {0, 1, 1, 3, 2, 0, 1, 1, 2, 3, 0, 0};
  const std::vector<Case> cases = {
      {"matmul", {3, 4}, {4, 2}, [](const T& a, const T& b) { return matmul(a, b); }},
      {"transpose", {3, 4}, {4, 3}, [](const T& a, const T& b) { return mul(transpose(a), b); }},
      {"add", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(add(a, b), a); }},
      {"sub", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(sub(a, b), b); }},
      {"add_bias", {3, 4}, {4}, [](const T& a, const T& b) { return mul(add_bias(a, b), a); }},
      {"scale_rows", {3, 4}, {3}, [](const T& a, const T& b) { return scale_rows(a, b); }},
      {"concat", {3, 2}, {3, 4}, [](const T& a, const T& b) { return mul(concat(a, b, 1), concat(b, a, 1)); }},
      {"reshape", {3, 4}, {6, 2}, [](const T& a, const T& b) { return mul(reshape(a, {6, 2}), b); }},
      {"slice_rows", {5, 2}, {2, 2}, [](const T& a, const T& b) { return mul(slice_rows(a, 1, 3), b); }},
      {"relu", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(relu(a), b); }},
      {"softmax", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(softmax(a, 1), b); }},
      {"softmax_axis0", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(softmax(a, 0), b); }},
      {"reduce_max", {3, 4, 2}, {3, 2}, [](const T& a, const T& b) { return mul(reduce(a, 1, ReduceMode::max), b); }},
      {"reduce_mean", {3, 4, 2}, {3, 2}, [](const T& a, const T& b) { return mul(reduce(a, 1, ReduceMode::mean), b); }},
      {"reduce_sum", {3, 4, 2}, {4, 2}, [](const T& a, const T& b) { return mul(reduce(a, 0, ReduceMode::sum), b); }},
      {"l2_normalize", {3, 4}, {3, 4}, [](const T& a, const T& b) { return mul(l2_normalize(a, 1, 1e-12), b); }},
      {"gather_rows", {4, 2}, {4, 3, 2}, [idx](const T& a, const T& b) { return mul(gather_rows(a, idx), b); }},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (int point = 0; point < 100; ++point) {
      auto a = random_tensor(c.a, rng, -1, 1, true);
      auto b = random_tensor(c.b, rng, -1, 1, true);
      for (auto& v : a.mutable_data()) {
        if (std::abs(v) < 0.05) v += v < 0 ? -0.05 : 0.05;
      }
      {
        Tape<double> tape;
        tape.backward(sum(c.fn(a, b)));
      }
      auto f = [&] { return sum(c.fn(a, b)).item(); };
      for (auto* t : {&a, &b}) {
        const std::vector<double> analytic(t->grad().begin(), t->grad().end());
        for (std::size_t i = 0; i < t->numel(); ++i) {
          worst = std::max(worst, relative_error(analytic[i], central_difference(*t, i, f)));
        }
      }
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

}  // namespace
}  // namespace ps2
