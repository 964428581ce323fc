// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "manager/error.hpp"
#include "manager/gradcheck.hpp"
#include "manager/ops.hpp"
#include "test_util.hpp"

using namespace manager;
using testutil::max_diff;
using testutil::random_leaf;
using testutil::random_tensor;

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
  EXPECT_THROW(t.at({2, 0}), IndexError);
}

TEST(Tensor, GradHasValueShape) {
  Rng rng(1);
  Tensor x = random_leaf(rng, {3, 4});
  sum(mul(x, x)).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Matmul, IdentityAndAnalytic) {
  const Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, m).to_vector(), m.to_vector());
  const Tensor r = matmul(Tensor::from_vector({1, 2}, {1, 0}), Tensor::from_vector({2, 1}, {0, 5}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  for (int c = 0; c < 20; ++c) {
    const Tensor a = random_tensor(rng, {3, 4});
    const Tensor b = random_tensor(rng, {4, 2});
    EXPECT_LE(max_diff(matmul(a, b), oracle::matmul(testutil::to_mat(a), testutil::to_mat(b))), 1e-12);
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_to_string({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_to_string({4, 5})), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  const auto u = softmax_with_temperature(Tensor::from_vector({3}, {0, 0, 0}), 1.0, 0).to_vector();
  for (double p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const auto h = softmax_with_temperature(Tensor::from_vector({3}, {std::log(2.0), 0, 0}), 1.0, 0).to_vector();
  EXPECT_NEAR(h[0], 0.5, 1e-15);
  EXPECT_NEAR(h[1], 0.25, 1e-15);
  EXPECT_NEAR(h[2], 0.25, 1e-15);
  const auto hot = softmax_with_temperature(Tensor::from_vector({3}, {10, 0, 0}), 1e6, 0).to_vector();
  for (double p : hot) EXPECT_NEAR(p, 1.0 / 3.0, 1e-5);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  const Tensor x = Tensor::from_vector({2}, {1, 2});
  EXPECT_THROW(softmax_with_temperature(x, 0.0, 0), DomainError);
  EXPECT_THROW(softmax_with_temperature(x, -1.0, 0), DomainError);
  EXPECT_THROW(softmax_with_temperature(x, Tensor::scalar(0.0), 0), DomainError);
}

TEST(Softmax, RowsAreDistributions) {
  Rng rng(3);
  for (int c = 0; c < 50; ++c) {
    const Tensor x = random_tensor(rng, {4, 7}, 3.0);
    const double tau = std::exp(rng.uniform(-1.0, 1.0));
    const auto p = softmax_with_temperature(x, tau, 1).to_vector();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        const double v = p[r * 7 + k];
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    const auto ref = oracle::softmax(oracle::Vec(x.data().begin(), x.data().begin() + 7), tau);
    EXPECT_LE(max_diff(std::span<const double>(p).first(7), ref), 1e-12);
  }
}

TEST(Softmax, CausalMaskIsExactlyZero) {
  Rng rng(4);
  const auto p = causal_softmax(random_tensor(rng, {2, 3, 3})).to_vector();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t q = 0; q < 3; ++q) {
      for (std::size_t k = q + 1; k < 3; ++k) EXPECT_EQ(p[h * 9 + q * 3 + k], 0.0);
    }
  }
}

TEST(LayerNorm, Examples) {
  const Tensor ones = Tensor::full({2}, 1.0), zeros = Tensor::zeros({2});
  for (double v : layer_norm(Tensor::full({1, 4}, 7.5), Tensor::full({4}, 1.0), Tensor::zeros({4})).to_vector()) {
    EXPECT_EQ(v, 0.0);
  }
  const auto y = layer_norm(Tensor::from_vector({1, 2}, {1, -1}), ones, zeros).to_vector();
  const double expect = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  EXPECT_NEAR(y[0], expect, 1e-15);
  EXPECT_NEAR(y[1], -expect, 1e-15);
  EXPECT_NEAR(y[0], 1.0, 1e-5);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
  Rng rng(5);
  for (int c = 0; c < 20; ++c) {
    const Tensor x = random_tensor(rng, {4, 8}, 2.0);
    const Tensor g = random_tensor(rng, {8}), b = random_tensor(rng, {8});
    const oracle::Ln p{g.to_vector(), b.to_vector()};
    EXPECT_LE(max_diff(layer_norm(x, g, b), oracle::layer_norm(testutil::to_mat(x), p)), 1e-10);
  }
}

TEST(LayerNorm, RejectsGainShape) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(add(Tensor::from_vector({2}, {1, 2}), Tensor::from_vector({2}, {3, 4})).to_vector(),
            (std::vector<double>{4, 6}));
  for (double v : mul(Tensor::from_vector({3}, {5, -2, 9}), Tensor::scalar(0.0)).to_vector()) EXPECT_EQ(v, 0.0);
  for (double v : scale(Tensor::from_vector({2}, {5, -2}), 0.0).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, BroadcastMatchesExplicitExpansion) {
  Rng rng(6);
  const std::size_t n = 6, l = 3, d = 5;
  const Tensor w = random_tensor(rng, {n, 1, 1});
  const Tensor x = random_tensor(rng, {n, l, d});
  const auto got = mul(w, x).to_vector();
  const auto wv = w.to_vector(), xv = x.to_vector();
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < l; ++t) {
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t at = (i * l + t) * d + k;
        err = std::max(err, std::abs(got[at] - wv[i] * xv[at]));
      }
    }
  }
  EXPECT_EQ(err, 0.0);
  EXPECT_EQ(broadcast_shapes({d}, {n, l, d}), (Shape{n, l, d}));
  EXPECT_EQ(broadcast_shapes({n, 1, d}, {l, 1}), (Shape{n, l, d}));
}

TEST(Elementwise, RejectsNonBroadcastable) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({4}), Tensor::zeros({3})), DimensionError);
}

TEST(Elementwise, GeluValues) {
  const auto y = gelu(Tensor::from_vector({3}, {0.0, 1.0, -1.0})).to_vector();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], oracle::gelu(1.0), 1e-15);
  EXPECT_NEAR(y[1], 0.8413447460685429, 1e-12);
  EXPECT_NEAR(y[2], -0.15865525393145707, 1e-12);
}

TEST(Concat, Examples) {
  EXPECT_EQ(concat_last(Tensor::from_vector({1}, {1}), Tensor::from_vector({1}, {2})).to_vector(),
            (std::vector<double>{1, 2}));
  EXPECT_THROW(concat_last(Tensor::zeros({2, 3}), Tensor::zeros({1, 0})), DimensionError);
  EXPECT_THROW(concat_last(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), DimensionError);
}

TEST(Concat, SplitRoundTrip) {
  Rng rng(7);
  for (int c = 0; c < 20; ++c) {
    const std::size_t p = 1 + c % 4, q = 1 + (c * 7) % 5;
    const Tensor a = random_tensor(rng, {3, 2, p}), b = random_tensor(rng, {3, 2, q});
    const Tensor ab = concat_last(a, b);
    EXPECT_EQ(ab.shape(), (Shape{3, 2, p + q}));
    EXPECT_TRUE(testutil::bit_equal(slice_last(ab, 0, p), a));
    EXPECT_TRUE(testutil::bit_equal(slice_last(ab, p, q), b));
  }
}

TEST(CrossEntropy, Examples) {
  const int target[] = {2};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 4}), target).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor::from_vector({1, 4}, {0, 0, 1000, 0}), target).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesDirectSum) {
  Rng rng(8);
  for (int c = 0; c < 20; ++c) {
    const Tensor logits = random_tensor(rng, {5, 3}, 2.0);
    std::vector<int> t(5);
    for (auto& v : t) v = rng.uniform_int(0, 2);
    EXPECT_NEAR(cross_entropy(logits, t).item(), oracle::cross_entropy(testutil::to_mat(logits), t), 1e-10);
  }
}

TEST(CrossEntropy, RejectsOutOfRangeTarget) {
  const int bad[] = {4};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
  const int neg[] = {-1};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 4}), neg), IndexError);
}

TEST(Backward, Examples) {
  Tensor x = Tensor::from_vector({3}, {0.5, -2, 4}).set_requires_grad();
  sum(x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

  Tensor a = Tensor::full({1}, 3.0).set_requires_grad();
  Tensor b = Tensor::full({1}, -5.0).set_requires_grad();
  sum(mul(a, b)).backward();
  EXPECT_EQ(a.grad()[0], -5.0);
  EXPECT_EQ(b.grad()[0], 3.0);
}

TEST(Backward, Contracts) {
  Tensor x = Tensor::from_vector({2}, {1, 2}).set_requires_grad();
  EXPECT_THROW(mul(x, x).backward(), ContractError);
  const Tensor loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::from_vector({2}, {1, 2}).set_requires_grad();
  NoGradGuard guard;
  const Tensor y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_FALSE(grad_mode_enabled());
}

TEST(Gradcheck, Quadratic) {
  Tensor x = Tensor::from_vector({1}, {3.0});
  const auto r = gradcheck([&] { return sum(mul(x, x)); }, {{"x", x}});
  ASSERT_TRUE(x.has_grad());
  EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);
  EXPECT_LE(r.parameters[0].max_absolute_error, 1e-7);
  EXPECT_TRUE(r.passed());
}

TEST(Gradcheck, SoftmaxJacobian) {
  Rng rng(9);
  Tensor x = random_leaf(rng, {3, 5});
  const Tensor r = random_tensor(rng, {3, 5});
  GradcheckOptions opts;
  opts.threshold = 1e-5;
  const auto rep = gradcheck([&] { return sum(mul(softmax_with_temperature(x, 0.7, 1), r)); }, {{"x", x}}, opts);
  EXPECT_TRUE(rep.passed()) << rep.max_relative_error();
}

TEST(Gradcheck, FlagsWrongGradient) {
  // Detaching exp(x) drops the x * exp(x) term from the analytic gradient.
  Tensor x = Tensor::from_vector({2}, {0.3, -0.2});
  const auto rep = gradcheck([&] { return add(sum(x), sum(mul(exp(x).detach(), x))); }, {{"x", x}});
  EXPECT_FALSE(rep.passed());
  EXPECT_EQ(rep.flagged(), 2u);
}

namespace {

using OpLoss = std::function<Tensor(const std::vector<Tensor>&)>;

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  OpLoss f;
  double offset = 0.0;  // added to inputs, e.g. to stay away from reciprocal's pole
};

}  // namespace

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const int ids[] = {1, 3, 0};
  const std::vector<OpCase> cases = {
      {"add", {{3, 4}, {4}}, [](auto& x) { return add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 1}}, [](auto& x) { return sub(x[0], x[1]); }},
      {"mul", {{2, 3, 4}, {3, 1}}, [](auto& x) { return mul(x[0], x[1]); }},
      {"scale", {{3, 4}}, [](auto& x) { return scale(x[0], -1.7); }},
      {"add_scalar", {{3, 4}}, [](auto& x) { return add_scalar(x[0], 0.4); }},
      {"neg", {{5}}, [](auto& x) { return neg(x[0]); }},
      {"reciprocal", {{5}}, [](auto& x) { return reciprocal(x[0]); }, 3.0},
      {"exp", {{2, 3}}, [](auto& x) { return exp(x[0]); }},
      {"tanh", {{2, 3}}, [](auto& x) { return tanh(x[0]); }},
      {"gelu", {{2, 3}}, [](auto& x) { return gelu(x[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1]); }},
      {"transpose", {{3, 4}}, [](auto& x) { return transpose(x[0]); }},
      {"reshape", {{3, 4}}, [](auto& x) { return reshape(x[0], {2, 6}); }},
      {"mean", {{3, 4}}, [](auto& x) { return mean(x[0]); }},
      {"sum_axis", {{3, 4, 2}}, [](auto& x) { return sum_axis(x[0], 1); }},
      {"softmax", {{3, 4}}, [](auto& x) { return softmax(x[0], 0); }},
      {"softmax_tau", {{3, 4}, {1}}, [](auto& x) { return softmax_with_temperature(x[0], exp(x[1]), 1); }},
      {"causal_softmax", {{2, 3, 4}}, [](auto& x) { return causal_softmax(x[0]); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](auto& x) { return layer_norm(x[0], x[1], x[2]); }},
      {"concat_last", {{2, 3}, {2, 2}}, [](auto& x) { return concat_last(x[0], x[1]); }},
      {"slice_last", {{2, 5}}, [](auto& x) { return slice_last(x[0], 1, 3); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](auto& x) { return concat_rows(x); }},
      {"slice_rows", {{4, 3}}, [](auto& x) { return slice_rows(x[0], 1, 2); }},
      {"stack", {{2, 3}, {2, 3}}, [](auto& x) { return stack(x); }},
      {"select", {{3, 2, 2}}, [](auto& x) { return select(x[0], 1); }},
      {"embedding", {{4, 3}}, [&](auto& x) { return embedding(x[0], ids); }},
      {"cross_entropy", {{3, 4}}, [&](auto& x) { return cross_entropy(x[0], ids); }},
  };
  const OpCase& op = cases.at(static_cast<std::size_t>(GetParam()));
  for (int instance = 0; instance < 20; ++instance) {
    Rng rng(1000 + GetParam(), std::to_string(instance));
    std::vector<Tensor> inputs;
    std::vector<NamedTensor> named;
    for (std::size_t i = 0; i < op.shapes.size(); ++i) {
      Tensor t = random_tensor(rng, op.shapes[i]);
      for (auto& v : t.mutable_data()) v += op.offset;
      inputs.push_back(t);
      named.push_back({"x" + std::to_string(i), t});
    }
    const Tensor probe = op.f(inputs);
    const Tensor r = random_tensor(rng, probe.shape());
    const auto rep = gradcheck([&] { return sum(mul(op.f(inputs), r)); }, named);
    EXPECT_TRUE(rep.passed()) << op.name << " instance " << instance << " max rel " << rep.max_relative_error();
  }
}

INSTANTIATE_TEST_SUITE_P(EveryOp, OpGradient, ::testing::Range(0, 27));

TEST(Determinism, SameSeedSameValues) {
  auto run = [] {
    Rng rng(42);
    const Tensor a = random_tensor(rng, {4, 6}), b = random_tensor(rng, {6, 3});
    return softmax_last(matmul(gelu(a), b)).to_vector();
  };
  EXPECT_EQ(run(), run());
}
