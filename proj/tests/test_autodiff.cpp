#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "crl/autodiff.hpp"
#include "ad_cases.hpp"
#include "crl/rng.hpp"

using namespace crl;
using namespace crl::ad;
using namespace crl::testing;

TEST(Ops, EveryOpMatchesFiniteDifferencesAtTwentyPoints) {
  Rng rng(2024);
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      std::vector<Tensor> point;
      for (auto [r, k] : c.shapes) point.push_back(random_tensor(r, k, rng, c.lo, c.hi));
      worst = std::max(worst, max_rel_error(c.f, point));
    }
    EXPECT_LT(worst, 1e-6) << c.name;
  }
}

TEST(Ops, ForwardValues) {
  Tape t;
  const Var x = t.leaf(Tensor(1, 3, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(leaky_relu(x, 0.2).value(), Tensor(1, 3, {-0.2, 0.0, 2.0}));
  EXPECT_EQ(abs(x).value(), Tensor(1, 3, {1.0, 0.0, 2.0}));
  EXPECT_NEAR(softplus(x).value()[1], std::log(2.0), 1e-15);
  const Var m = t.leaf(Tensor(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(m, m).value(), Tensor(2, 2, {7, 10, 15, 22}));
  EXPECT_EQ(sum(m, 0).value(), Tensor(1, 2, {4, 6}));
  EXPECT_EQ(sum(m, 1).value(), Tensor(2, 1, {3, 7}));
  EXPECT_EQ(slice(m, 1, 1, 2).value(), Tensor(2, 1, {2, 4}));
  EXPECT_NEAR(softplus(t.constant(Tensor::scalar(800.0))).value().item(), 800.0, 1e-12);
  EXPECT_NEAR(softplus(t.constant(Tensor::scalar(-800.0))).value().item(), 0.0, 1e-300);
}

TEST(Backward, ScalarExamples) {
  {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(3.0));
    t.backward(square(x));
    EXPECT_DOUBLE_EQ(x.grad().item(), 6.0);
  }
  {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(0.0));
    t.backward(softplus(x));
    EXPECT_DOUBLE_EQ(x.grad().item(), 0.5);
  }
  {
    Tape t;
    const Var x = t.leaf(Tensor::scalar(1.7));
    t.backward(x);
    EXPECT_DOUBLE_EQ(x.grad().item(), 1.0);
  }
  {
    Tape t;
    const Var c = t.constant(Tensor::scalar(2.0));
    const Var x = t.leaf(Tensor::scalar(4.0));
    t.backward(exp(c) + 0.0 * c);
    EXPECT_DOUBLE_EQ(x.grad().item(), 0.0);
    EXPECT_DOUBLE_EQ(c.grad().item(), 0.0);
  }
}

TEST(Backward, MatmulGradientIsTransposeStructured) {
  Rng rng(1);
  Tape t;
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
  const Var va = t.leaf(a), vb = t.leaf(b);
  t.backward(sum(matmul(va, vb)));
  const Eigen::MatrixXd expected = Eigen::MatrixXd::Ones(3, 2) * b.to_eigen().transpose();
  EXPECT_LT((va.grad().to_eigen() - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, RandomFiveOpChains) {
  Rng rng(7);
  const std::vector<std::function<Var(Var)>> unary = {
      [](Var v) { return tanh(v); },          [](Var v) { return softplus(v); },
      [](Var v) { return leaky_relu(v, 0.3); }, [](Var v) { return square(v) * 0.3; },
      [](Var v) { return exp(v * 0.3); },     [](Var v) { return v * v + v; },
  };
  for (int t = 0; t < 50; ++t) {
    std::vector<std::size_t> picks;
    for (int k = 0; k < 5; ++k) picks.push_back(rng.below(unary.size()));
    const Fn f = [&](Tape& tape, const std::vector<Var>& x) {
      Var v = x[0];
      for (auto p : picks) v = unary[p](v);
      return contract(tape, v, 5);
    };
    EXPECT_LT(max_rel_error(f, {random_tensor(2, 3, rng, -1, 1)}), 1e-6);
  }
}

TEST(Backward, GradientsAccumulateOverReuse) {
  Tape t;
  const Var x = t.leaf(Tensor::scalar(2.0));
  t.backward(x * x * x + x);
  EXPECT_DOUBLE_EQ(x.grad().item(), 13.0);
}

TEST(Backward, Errors) {
  Tape t;
  const Var x = t.leaf(Tensor(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ShapeError);
  const Var s = sum(x);
  t.backward(s);
  EXPECT_THROW(t.backward(s), std::logic_error);
  t.zero_grad();
  EXPECT_NO_THROW(t.backward(s));
}

TEST(Ops, ShapeAndDomainErrors) {
  Tape t;
  const Var a = t.leaf(Tensor(2, 3)), b = t.leaf(Tensor(3, 2));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(broadcast(t.leaf(Tensor(2, 2)), 3, 2), ShapeError);
  EXPECT_THROW(log(t.leaf(Tensor(1, 2, {1.0, 0.0}))), DomainError);
  EXPECT_THROW(div(t.leaf(Tensor::scalar(1.0)), t.leaf(Tensor::scalar(0.0))), DomainError);
  try {
    add(a, b);
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3x2"), std::string::npos);
  }
}

TEST(Gradcheck, LinearFunctionIsExact) {
  Rng rng(3);
  const Tensor w = random_tensor(3, 3, rng);
  const TapeFunction f = [&](Tape& t, const std::vector<Var>& x) { return sum(x[0] * t.constant(w)); };
  EXPECT_LT(gradcheck(f, {random_tensor(3, 3, rng)}).max_rel_error, 1e-9);
}

TEST(Gradcheck, KinkIsExcluded) {
  const TapeFunction f = [](Tape&, const std::vector<Var>& x) { return sum(abs(x[0])); };
  const GradcheckResult r = gradcheck(f, {Tensor(1, 2, {0.0, 1.0})});
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Determinism, IdenticalGraphsGiveBitIdenticalGradients) {
  auto run = [] {
    Rng rng(11);
    Tape t;
    const Var a = t.leaf(random_tensor(8, 6, rng)), b = t.leaf(random_tensor(6, 5, rng));
    t.backward(mean(softplus(matmul(tanh(a), b))));
    return std::pair{a.grad(), b.grad()};
  };
  EXPECT_EQ(run(), run());
}
