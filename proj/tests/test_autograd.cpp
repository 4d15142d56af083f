#include <gtest/gtest.h>

#include "mcdut/core/nn_ops.hpp"
#include "mcdut/core/ops.hpp"
#include "testutil.hpp"

using namespace mcdut;
using mcdut::test::max_grad_rel_err;
using mcdut::test::rand_param;

namespace {

using V = Variable<double>;

constexpr double kTol = 1e-4;

// Reference convolution with explicit loops, for value checks against the
// im2col/GEMM path.
Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, int64_t stride, int64_t pad) {
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t F = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out({N, F, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double s = b[f];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                const int64_t iy = oy * stride + ki - pad;
                const int64_t ix = ox * stride + kj - pad;
                if (iy >= 0 && iy < H && ix >= 0 && ix < W) s += x.at(n, c, iy, ix) * w.at(f, c, ki, kj);
              }
          out.at(n, f, oy, ox) = s;
        }
  return out;
}

TEST(Autograd, AddMulChain) {
  Rng rng(1);
  V a = rand_param({3, 4}, rng);
  V b = rand_param({3, 4}, rng);
  auto build = [&] { return ops::mean(ops::mul(ops::add(a, b), ops::sub(a, b))); };
  EXPECT_LT(max_grad_rel_err(build, {a, b}), kTol);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Rng rng(2);
  V a = rand_param({5}, rng);
  // a appears on both paths; gradient must sum.
  auto build = [&] { return ops::sum(ops::add(ops::mul(a, a), ops::mul_scalar(a, 3.0))); };
  a.zero_grad();
  auto l = build();
  backward(l);
  for (int64_t i = 0; i < 5; ++i)
    EXPECT_NEAR(a.grad()[i], 2.0 * a.value()[i] + 3.0, 1e-12);
}

TEST(Autograd, Activations) {
  Rng rng(3);
  V a = rand_param({4, 5}, rng);
  // keep values away from the relu/abs kinks
  for (int64_t i = 0; i < a.value().numel(); ++i)
    if (std::abs(a.value()[i]) < 0.05) a.mutable_value()[i] = 0.3;
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::relu(a)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::leaky_relu(a, 0.2)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::tanh_op(a)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::sigmoid(a)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::softplus(a)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::sum(ops::abs_op(a)); }, {a}), kTol);
}

TEST(Autograd, MatrixOps) {
  Rng rng(4);
  V a = rand_param({4, 3}, rng);
  V b = rand_param({3, 5}, rng);
  V c = rand_param({6, 3}, rng);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::matmul(a, b)); }, {a, b}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::matmul_nt(a, c)); }, {a, c}), kTol);
  V d = rand_param({4, 3}, rng);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::rowwise_dot(a, d)); }, {a, d}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::transpose2d(a)); }, {a}), kTol);
}

TEST(Autograd, NormalizeGatherLse) {
  Rng rng(5);
  V a = rand_param({6, 4}, rng);
  EXPECT_LT(max_grad_rel_err(
                [&] { return ops::mean(ops::mul(ops::row_l2_normalize(a), ops::row_l2_normalize(a))); },
                {a}),
            kTol);
  std::vector<int64_t> idx{3, 0, 5, 3};
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::gather_rows(a, idx)); }, {a}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::lse_rows(a)); }, {a}), kTol);
  V b = rand_param({6, 3}, rng);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::lse_rows(ops::concat_cols(a, b))); }, {a, b}),
            kTol);
}

TEST(Autograd, LseRowsIsStable) {
  Tensor<double> big({1, 3});
  big[0] = 1000.0;
  big[1] = 1000.0;
  big[2] = 1000.0;
  auto v = V::constant(big);
  auto out = ops::lse_rows(v);
  EXPECT_NEAR(out.value()[0], 1000.0 + std::log(3.0), 1e-9);
}

TEST(Autograd, BlockRowMeanAndPositions) {
  Rng rng(6);
  V a = rand_param({2, 3, 4}, rng);  // (N,C,P)
  auto build = [&] {
    auto rows = ops::positions_to_rows(a);          // (8, 3)
    auto m = ops::block_row_mean(rows, 2);          // (2, 3)
    return ops::mean(ops::mul(m, m));
  };
  EXPECT_LT(max_grad_rel_err(build, {a}), kTol);
}

TEST(Autograd, Conv2dMatchesNaive) {
  Rng rng(7);
  V x = rand_param({2, 3, 9, 8}, rng);
  V w = rand_param({4, 3, 3, 3}, rng, 0.5);
  V b = rand_param({4}, rng, 0.1);
  for (int64_t stride : {1, 2}) {
    for (int64_t pad : {0, 1, 2}) {
      auto y = ops::conv2d(x, w, b, stride, pad);
      auto ref = naive_conv2d(x.value(), w.value(), b.value(), stride, pad);
      ASSERT_EQ(y.value().shape(), ref.shape());
      for (int64_t i = 0; i < ref.numel(); ++i) ASSERT_NEAR(y.value()[i], ref[i], 1e-10);
    }
  }
}

TEST(Autograd, Conv2dGrad) {
  Rng rng(8);
  V x = rand_param({1, 2, 6, 5}, rng);
  V w = rand_param({3, 2, 3, 3}, rng, 0.5);
  V b = rand_param({3}, rng, 0.1);
  auto build = [&] { return ops::mean(ops::mul(ops::conv2d(x, w, b, 2, 1), ops::conv2d(x, w, b, 2, 1))); };
  EXPECT_LT(max_grad_rel_err(build, {x, w, b}), kTol);
}

TEST(Autograd, Conv7x7Grad) {
  Rng rng(9);
  V x = rand_param({1, 2, 8, 8}, rng);
  V w = rand_param({2, 2, 7, 7}, rng, 0.3);
  V b = rand_param({2}, rng, 0.1);
  auto build = [&] { return ops::mean(ops::conv2d(x, w, b, 1, 3)); };
  EXPECT_LT(max_grad_rel_err(build, {x, w, b}), kTol);
}

TEST(Autograd, ConvTranspose2dShapeAndGrad) {
  Rng rng(10);
  V x = rand_param({1, 3, 5, 4}, rng);
  V w = rand_param({3, 2, 3, 3}, rng, 0.5);
  V b = rand_param({2}, rng, 0.1);
  auto y = ops::conv_transpose2d(x, w, b, 2, 1, 1);
  EXPECT_EQ(y.value().shape(), (Shape{1, 2, 10, 8}));
  auto build = [&] {
    auto t = ops::conv_transpose2d(x, w, b, 2, 1, 1);
    return ops::mean(ops::mul(t, t));
  };
  EXPECT_LT(max_grad_rel_err(build, {x, w, b}), kTol);
}

TEST(Autograd, ConvTransposeIsConvAdjoint) {
  // <conv(x), y> must equal <x, convT(y)> when convT uses the same weights.
  Rng rng(11);
  Tensor<double> xt = Tensor<double>::randn({1, 2, 6, 6}, rng);
  Tensor<double> wt = Tensor<double>::randn({3, 2, 3, 3}, rng);  // conv weight (F,C,kh,kw)
  Tensor<double> yt = Tensor<double>::randn({1, 3, 3, 3}, rng);
  Tensor<double> zero_f = Tensor<double>::zeros({3});
  Tensor<double> zero_c = Tensor<double>::zeros({2});
  auto x = V::constant(xt), y = V::constant(yt);
  auto conv_out = ops::conv2d(x, V::constant(wt), V::constant(zero_f), 2, 1);
  // convT weight layout is (C_in=3, C_out=2, kh, kw): same storage as (F,C,kh,kw).
  auto convt_out = ops::conv_transpose2d(y, V::constant(wt), V::constant(zero_c), 2, 1, 1);
  ASSERT_EQ(conv_out.value().shape(), yt.shape());
  ASSERT_EQ(convt_out.value().shape(), xt.shape());
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < yt.numel(); ++i) lhs += conv_out.value()[i] * yt[i];
  for (int64_t i = 0; i < xt.numel(); ++i) rhs += convt_out.value()[i] * xt[i];
  EXPECT_NEAR(lhs, rhs, 1e-9);
}

TEST(Autograd, ReflectionPad) {
  Rng rng(12);
  V x = rand_param({1, 1, 3, 3}, rng);
  auto y = ops::reflection_pad2d(x, 1);
  EXPECT_EQ(y.value().shape(), (Shape{1, 1, 5, 5}));
  // corner: out[0,0] reflects in[1,1]
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), x.value().at(0, 0, 1, 1));
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 1), x.value().at(0, 0, 1, 0));
  auto build = [&] {
    auto p = ops::reflection_pad2d(x, 1);
    return ops::mean(ops::mul(p, p));
  };
  EXPECT_LT(max_grad_rel_err(build, {x}), kTol);
}

TEST(Autograd, InstanceNorm) {
  Rng rng(13);
  V x = rand_param({2, 3, 4, 5}, rng);
  auto y = ops::instance_norm2d(x);
  // each plane standardized
  for (int64_t nc = 0; nc < 6; ++nc) {
    double mu = 0, var = 0;
    for (int64_t i = 0; i < 20; ++i) mu += y.value()[nc * 20 + i];
    mu /= 20;
    for (int64_t i = 0; i < 20; ++i) var += std::pow(y.value()[nc * 20 + i] - mu, 2);
    var /= 20;
    EXPECT_NEAR(mu, 0.0, 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
  auto build = [&] {
    auto t = ops::instance_norm2d(x);
    return ops::mean(ops::mul(t, ops::tanh_op(t)));
  };
  EXPECT_LT(max_grad_rel_err(build, {x}), kTol);
}

TEST(Autograd, Pools) {
  Rng rng(14);
  V x = rand_param({2, 3, 4, 5}, rng);
  EXPECT_EQ(ops::dir_pool(x, true, false).value().shape(), (Shape{2, 3, 4}));
  EXPECT_EQ(ops::dir_pool(x, false, false).value().shape(), (Shape{2, 3, 5}));
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::dir_pool(x, true, false)); }, {x}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::dir_pool(x, false, true)); }, {x}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::channel_pool(x, false)); }, {x}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::channel_pool(x, true)); }, {x}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::global_avg_pool(x)); }, {x}), kTol);
}

TEST(Autograd, ScalesAndGather) {
  Rng rng(15);
  V x = rand_param({2, 3, 4, 4}, rng);
  V g = rand_param({2, 3}, rng);
  V m = rand_param({2, 1, 4, 4}, rng);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::scale_channels(x, g)); }, {x, g}), kTol);
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::scale_spatial(x, m)); }, {x, m}), kTol);
  std::vector<int64_t> ids{0, 5, 15, 7};
  EXPECT_LT(max_grad_rel_err([&] { return ops::mean(ops::gather_patches(x, 1, ids)); }, {x}), kTol);
}

TEST(Autograd, Linear) {
  Rng rng(16);
  V x = rand_param({5, 4}, rng);
  V w = rand_param({3, 4}, rng);
  V b = rand_param({3}, rng);
  auto build = [&] {
    auto y = ops::linear(x, w, b);
    return ops::mean(ops::mul(y, y));
  };
  EXPECT_LT(max_grad_rel_err(build, {x, w, b}), kTol);
}

TEST(Autograd, DetachBlocksGradient) {
  Rng rng(17);
  V a = rand_param({3}, rng);
  auto d = a.detach();
  EXPECT_FALSE(d.requires_grad());
  auto loss = ops::sum(ops::mul(a, d));
  a.zero_grad();
  backward(loss);
  for (int64_t i = 0; i < 3; ++i) EXPECT_NEAR(a.grad()[i], d.value()[i], 1e-12);
}

}  // namespace
