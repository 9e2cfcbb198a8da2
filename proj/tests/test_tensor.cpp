#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dpn/checks.hpp"
#include "dpn/error.hpp"
#include "dpn/rng.hpp"
#include "dpn/tensor.hpp"

using namespace dpn;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST(Linear, IdentityWeights) {
  Tape tape;
  const Tensor x = Tensor::from(1, 2, {1, 2});
  const Tensor w = Tensor::from(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::from(1, 2, {0, 0});
  EXPECT_EQ(vals(linear(tape, x, w, b, Activation::Identity)), (std::vector<double>{1, 2}));
}

TEST(Linear, ReluClampsNegative) {
  Tape tape;
  const Tensor x = Tensor::from(1, 2, {-1, 2});
  const Tensor w = Tensor::from(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::from(1, 2, {0, 0});
  EXPECT_EQ(vals(linear(tape, x, w, b, Activation::Relu)), (std::vector<double>{0, 2}));
}

TEST(Linear, HandProduct) {
  Tape tape;
  const Tensor out = linear(tape, Tensor::from(1, 2, {1, 1}), Tensor::from(2, 1, {2, 3}),
                            Tensor::from(1, 1, {1}), Activation::Identity);
  EXPECT_EQ(out.item(), 6.0);
}

TEST(Linear, ShapeMismatchIsDimensionError) {
  Tape tape;
  try {
    linear(tape, Tensor::from(1, 3, {1, 2, 3}), Tensor::from(2, 1, {1, 1}),
           Tensor::from(1, 1, {0}), Activation::Identity);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Dimension);
  }
}

TEST(Linear, NonFiniteOutputIsNumericError) {
  Tape tape;
  try {
    linear(tape, Tensor::from(1, 1, {1e308}), Tensor::from(1, 1, {1e10}),
           Tensor::from(1, 1, {0}), Activation::Identity);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Numeric);
  }
}

TEST(MaxPool, PerChannelMax) {
  Tape tape;
  EXPECT_EQ(vals(max_pool_over_points(tape, Tensor::from(2, 2, {1, 5, 3, 2})).values),
            (std::vector<double>{3, 5}));
  EXPECT_EQ(vals(max_pool_over_points(tape, Tensor::from(1, 2, {7, 7})).values),
            (std::vector<double>{7, 7}));
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  Tape tape;
  const Tensor x = Tensor::from(2, 2, {1, 5, 3, 2}, true);
  const Tensor pooled = max_pool_over_points(tape, x).values;
  tape.backward(sum(tape, pooled));
  EXPECT_EQ(grads(x), (std::vector<double>{0, 1, 1, 0}));
}

TEST(Concat, Channels) {
  Tape tape;
  EXPECT_EQ(vals(concat_channels(tape, Tensor::from(1, 1, {1}), Tensor::from(1, 1, {2}))),
            (std::vector<double>{1, 2}));
  EXPECT_EQ(vals(concat_channels(tape, Tensor::from(2, 1, {1, 2}), Tensor::from(2, 1, {3, 4}))),
            (std::vector<double>{1, 3, 2, 4}));
}

TEST(Concat, BackwardSplitsUpstream) {
  Tape tape;
  const Tensor a = Tensor::from(1, 1, {1}, true);
  const Tensor b = Tensor::from(1, 1, {2}, true);
  const Tensor c = concat_channels(tape, a, b);
  // Weighted sum with weights [1, 2] gives upstream [[1, 2]].
  tape.backward(sum(tape, mul(tape, c, Tensor::from(1, 2, {1, 2}))));
  EXPECT_EQ(grads(a), (std::vector<double>{1}));
  EXPECT_EQ(grads(b), (std::vector<double>{2}));
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const Tensor x = Tensor::from(2, 2, {1, 2, 3, 4}, true);
  tape.backward(sum(tape, x));
  EXPECT_EQ(grads(x), (std::vector<double>(4, 1.0)));
}

TEST(Backward, SquareGivesTwoX) {
  Tape tape;
  const Tensor x = Tensor::from(1, 1, {3}, true);
  tape.backward(sum(tape, mul(tape, x, x)));
  EXPECT_EQ(grads(x), (std::vector<double>{6}));
}

TEST(Backward, ParametersUnchangedGradsAccumulate) {
  Rng rng(3);
  const std::vector<std::size_t> dims{3, 4, 2};
  const Mlp mlp = Mlp::init(dims, Activation::Identity, rng);
  std::vector<std::vector<double>> before;
  for (const Tensor& p : mlp.parameters()) before.push_back(vals(p));
  const Tensor x = Tensor::from(2, 3, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6});
  std::vector<std::vector<double>> first;
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(sum(tape, mlp.forward(tape, x)));
    if (pass == 0)
      for (const Tensor& p : mlp.parameters()) first.push_back(grads(p));
  }
  const auto params = mlp.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(vals(params[i]), before[i]);
    for (std::size_t j = 0; j < first[i].size(); ++j)
      EXPECT_DOUBLE_EQ(params[i].grad()[j], 2 * first[i][j]);
  }
}

TEST(Mlp, AdjacentLayersChain) {
  Rng rng(1);
  const std::vector<std::size_t> dims{4, 8, 16, 5};
  const Mlp mlp = Mlp::init(dims, Activation::Relu, rng);
  ASSERT_EQ(mlp.layers().size(), 3u);
  for (std::size_t i = 0; i + 1 < mlp.layers().size(); ++i)
    EXPECT_EQ(mlp.layers()[i].out_dim(), mlp.layers()[i + 1].in_dim());
  EXPECT_EQ(mlp.in_dim(), 4u);
  EXPECT_EQ(mlp.out_dim(), 5u);
}

TEST(Tensor, FromRejectsWrongLength) {
  EXPECT_THROW(Tensor::from(2, 2, {1, 2, 3}), Error);
}

TEST(Tensor, GradShapeMatchesData) {
  Tape tape;
  const Tensor x = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6}, true);
  tape.backward(sum(tape, scale(tape, x, 2.0)));
  EXPECT_EQ(x.grad().size(), x.size());
}

TEST(GradientCheck, EveryOpWithinTolerance) {
  for (const CheckResult& r : check_op_gradients(100, 11)) {
    EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    EXPECT_LT(r.metric, kOpGradTolerance) << r.name;
  }
}
