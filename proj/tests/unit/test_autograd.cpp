#include <gtest/gtest.h>

#include <cmath>

#include "datt/autograd.hpp"
#include "datt/errors.hpp"
#include "gradcheck.hpp"

namespace datt {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::weighted_sum;

constexpr double kTol = 1e-4;

ag::Var leaf(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return ag::parameter(random_tensor(std::move(s), seed, lo, hi));
}

#define EXPECT_GRADS_MATCH(loss_expr, ...)                                      \
  do {                                                                          \
    const auto r = check_gradients([&] { return loss_expr; }, {__VA_ARGS__});   \
    EXPECT_LT(r.max_rel_error, kTol) << "worst " << r.worst;                    \
    EXPECT_GT(r.checked, 0u);                                                   \
  } while (0)

TEST(Grad, MatmulShared) {
  auto a = leaf({2, 3, 4}, 1), b = leaf({4, 5}, 2);
  EXPECT_GRADS_MATCH(weighted_sum(ag::matmul(a, b), 9), a, b);
}

TEST(Grad, MatmulBatched) {
  auto a = leaf({3, 2, 4}, 3), b = leaf({3, 4, 5}, 4);
  EXPECT_GRADS_MATCH(weighted_sum(ag::matmul(a, b), 9), a, b);
}

TEST(Grad, MatmulBatchedLarge) {
  // Past the small-product threshold.
  auto a = leaf({2, 20, 17}, 5), b = leaf({2, 17, 19}, 6);
  EXPECT_GRADS_MATCH(weighted_sum(ag::matmul(a, b), 9), a, b);
}

TEST(Grad, LinearWithBias) {
  auto x = leaf({2, 3, 4}, 7), w = leaf({5, 4}, 8), b = leaf({5}, 9);
  EXPECT_GRADS_MATCH(weighted_sum(ag::linear(x, w, b), 1), x, w, b);
}

TEST(Grad, LinearWithoutBias) {
  auto x = leaf({6, 4}, 10), w = leaf({3, 4}, 11);
  EXPECT_GRADS_MATCH(weighted_sum(ag::linear(x, w), 1), x, w);
}

TEST(Grad, AddMulScale) {
  auto a = leaf({3, 4}, 12), b = leaf({3, 4}, 13);
  EXPECT_GRADS_MATCH(weighted_sum(ag::scale(ag::mul(ag::add(a, b), a), -0.7), 2), a, b);
}

TEST(Grad, Relu) {
  auto x = leaf({5, 6}, 14);
  EXPECT_GRADS_MATCH(weighted_sum(ag::relu(x), 3), x);
}

TEST(Grad, Softmax) {
  auto x = leaf({3, 2, 5}, 15, -3.0, 3.0);
  EXPECT_GRADS_MATCH(weighted_sum(ag::softmax_lastdim(x), 4), x);
}

TEST(Grad, LayerNorm) {
  auto x = leaf({4, 6}, 16, -2.0, 2.0), g = leaf({6}, 17, 0.5, 1.5), b = leaf({6}, 18);
  EXPECT_GRADS_MATCH(weighted_sum(ag::layer_norm(x, g, b, 1e-5), 5), x, g, b);
}

TEST(Grad, MeanAxis) {
  auto x = leaf({3, 4, 5}, 19);
  EXPECT_GRADS_MATCH(weighted_sum(ag::mean_axis(x, 0), 6), x);
  EXPECT_GRADS_MATCH(weighted_sum(ag::mean_axis(x, 1), 6), x);
  EXPECT_GRADS_MATCH(weighted_sum(ag::mean_axis(x, -1), 6), x);
}

TEST(Grad, SumReductions) {
  auto x = leaf({3, 4}, 20);
  EXPECT_GRADS_MATCH(ag::sum_all(ag::mul(x, x)), x);
  EXPECT_GRADS_MATCH(weighted_sum(ag::sum_lastdim(x), 7), x);
}

TEST(Grad, BroadcastLastdim) {
  auto x = leaf({3, 2, 1}, 21);
  EXPECT_GRADS_MATCH(weighted_sum(ag::broadcast_lastdim(x, 4), 8), x);
}

TEST(Grad, Concat) {
  auto a = leaf({2, 3, 2}, 22), b = leaf({2, 3, 4}, 23);
  EXPECT_GRADS_MATCH(weighted_sum(ag::concat_lastdim(a, b), 9), a, b);
}

TEST(Grad, Stack) {
  auto a = leaf({2, 3}, 24), b = leaf({2, 3}, 25), c = leaf({2, 3}, 26);
  EXPECT_GRADS_MATCH(weighted_sum(ag::stack(std::vector<ag::Var>{a, b, c}), 10), a, b, c);
}

TEST(Grad, Slice) {
  auto x = leaf({3, 5, 2}, 27);
  EXPECT_GRADS_MATCH(weighted_sum(ag::slice(x, 1, 1, 4), 11), x);
  EXPECT_GRADS_MATCH(weighted_sum(ag::slice(x, 0, 2, 3), 11), x);
}

TEST(Grad, Permute) {
  auto x = leaf({2, 3, 4}, 28);
  EXPECT_GRADS_MATCH(weighted_sum(ag::permute(x, {2, 0, 1}), 12), x);
  EXPECT_GRADS_MATCH(weighted_sum(ag::permute(x, {1, 0, 2}), 12), x);
}

TEST(Grad, Reshape) {
  auto x = leaf({2, 6}, 29);
  EXPECT_GRADS_MATCH(weighted_sum(ag::reshape(x, {3, 4}), 13), x);
}

TEST(Grad, MseLoss) {
  auto x = leaf({5, 1}, 30);
  const Tensor target = random_tensor({5, 1}, 31);
  EXPECT_GRADS_MATCH(ag::mse_loss(x, target), x);
}

TEST(Grad, SharedSubgraphAccumulates) {
  auto x = leaf({4}, 32);
  // x feeds the product twice.
  EXPECT_GRADS_MATCH(ag::sum_all(ag::mul(ag::relu(x), ag::scale(x, 3.0))), x);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  const Tensor x = random_tensor({7, 9}, 33, -20.0, 20.0);
  const Tensor y = ag::softmax_lastdim(ag::constant(x)).value();
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += y.at(r, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autograd, SoftmaxStableForLargeLogits) {
  const Tensor x = Tensor::matrix({{1000.0, 1000.0, -1000.0}});
  const Tensor y = ag::softmax_lastdim(ag::constant(x)).value();
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[2], 0.0, 1e-15);
}

TEST(Autograd, LayerNormStatistics) {
  const Tensor x = random_tensor({3, 8}, 34, -5.0, 5.0);
  auto y = ag::layer_norm(ag::constant(x), ag::constant(Tensor(Shape{8}, 1.0)),
                          ag::constant(Tensor(Shape{8}, 0.0)), 1e-12)
               .value();
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 8; ++j) m += y.at(r, j);
    m /= 8;
    for (std::size_t j = 0; j < 8; ++j) v += (y.at(r, j) - m) * (y.at(r, j) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 8, 1.0, 1e-9);
  }
}

TEST(Autograd, MatmulValues) {
  auto a = ag::constant(Tensor::matrix({{1, 2}, {3, 4}}));
  auto b = ag::constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(ag::matmul(a, b).value(), Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Autograd, PermuteValues) {
  auto x = ag::constant(Tensor(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(ag::permute(x, {1, 0}).value(), Tensor::matrix({{1, 4}, {2, 5}, {3, 6}}));
}

TEST(Autograd, ShapeErrors) {
  auto a = ag::constant(Tensor(Shape{2, 3}));
  auto b = ag::constant(Tensor(Shape{2, 3}));
  EXPECT_THROW(ag::matmul(a, b), DimensionError);
  EXPECT_THROW(ag::add(a, ag::constant(Tensor(Shape{3, 2}))), DimensionError);
  EXPECT_THROW(ag::linear(a, ag::constant(Tensor(Shape{4, 2}))), DimensionError);
  EXPECT_THROW(ag::slice(a, 1, 2, 2), DimensionError);
  EXPECT_THROW(ag::permute(a, {0, 0}), DimensionError);
  EXPECT_THROW(ag::reshape(a, {5}), DimensionError);
  EXPECT_THROW(ag::broadcast_lastdim(a, 4), DimensionError);
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  auto x = ag::parameter(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(ag::backward(ag::scale(x, 2.0)), ContractError);
}

TEST(Autograd, SecondBackwardRequiresReset) {
  auto x = ag::parameter(Tensor(Shape{2}, 1.0));
  auto y = ag::sum_all(ag::scale(x, 2.0));
  ag::backward(y);
  EXPECT_THROW(ag::backward(y), ContractError);
  ag::reset_graph_grads(y);
  ag::backward(y);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Autograd, GradientsAccumulateAcrossRoots) {
  auto x = ag::parameter(Tensor(Shape{1}, 3.0));
  ag::backward(ag::sum_all(ag::scale(x, 2.0)));
  ag::backward(ag::sum_all(ag::scale(x, 5.0)));
  EXPECT_EQ(x.grad()[0], 7.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autograd, NoGradRecordsNothing) {
  auto x = ag::parameter(Tensor(Shape{2}, 1.0));
  ag::Var y;
  {
    ag::NoGradGuard g;
    EXPECT_FALSE(ag::grad_enabled());
    y = ag::sum_all(ag::scale(x, 2.0));
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autograd, ConstantsGetNoGradient) {
  auto c = ag::constant(Tensor(Shape{2}, 1.0));
  auto p = ag::parameter(Tensor(Shape{2}, 2.0));
  ag::backward(ag::sum_all(ag::mul(c, p)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(p.grad()[0], 1.0);
}

TEST(Autograd, OnlyLeavesMutable) {
  auto x = ag::parameter(Tensor(Shape{2}, 1.0));
  auto y = ag::scale(x, 2.0);
  EXPECT_NO_THROW(x.mutable_value());
  EXPECT_THROW(y.mutable_value(), ContractError);
}

}  // namespace
}  // namespace datt
