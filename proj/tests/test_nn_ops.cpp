#include <gtest/gtest.h>

#include <cmath>

#include "fanet/gradcheck.hpp"
#include "fanet/nn_ops.hpp"
#include "test_util.hpp"

namespace fanet {
namespace {

using test::random_parameter;
using test::random_tensor;
using test::to_vector;

// Direct six-loop convolution with explicit zero padding.
Tensor conv_oracle(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                   std::size_t stride, Padding padding) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  std::size_t oh, ow, pt = 0, pl = 0;
  if (padding == Padding::kSame) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const long th = std::max<long>(0, long((oh - 1) * stride + kh) - long(h));
    const long tw = std::max<long>(0, long((ow - 1) * stride + kw) - long(w));
    pt = std::size_t(th / 2);
    pl = std::size_t(tw / 2);
  } else {
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
  }
  Tensor out({n, oh, ow, cout});
  auto o = out.mutable_values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = bias.defined() ? bias.at(co) : 0.0;
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj)
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const long y = long(i * stride + di) - long(pt);
                const long xx = long(j * stride + dj) - long(pl);
                if (y < 0 || xx < 0 || y >= long(h) || xx >= long(w)) continue;
                acc += x.at(((b * h + y) * w + xx) * cin + ci) *
                       kernel.at(((di * kw + dj) * cin + ci) * cout + co);
              }
          o[((b * oh + i) * ow + j) * cout + co] = acc;
        }
  return out;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.at(i), b.at(i), tol) << i;
}

double max_fd_error(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  double worst = 0.0;
  for (double e : finite_difference_check([&] { return random_projection(f(), 5); },
                                          params)) {
    worst = std::max(worst, e);
  }
  return worst;
}

TEST(Conv2d, IdentityKernel) {
  Tensor x = random_tensor({2, 5, 4, 3}, 1);
  Tensor k({1, 1, 3, 3}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) k.mutable_values()[c * 3 + c] = 1.0;
  Tensor y = conv2d(x, {k, Tensor({3}, 0.0), 1, Padding::kSame});
  EXPECT_EQ(to_vector(y), to_vector(x));
}

TEST(Conv2d, AllOnesKernelCountsNeighbours) {
  Tensor x({1, 3, 3, 1}, 1.0);
  Tensor y = conv2d(x, {Tensor({3, 3, 1, 1}, 1.0), Tensor({1}, 0.0), 1, Padding::kSame});
  EXPECT_EQ(y.at(4), 9.0);
  EXPECT_EQ(y.at(0), 4.0);
  EXPECT_EQ(y.at(1), 6.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::uint64_t seed = 100;
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    for (std::size_t stride : {1u, 2u}) {
      for (Padding pad : {Padding::kSame, Padding::kValid}) {
        Tensor x = random_tensor({2, 9, 8, 3}, seed++);
        Tensor kern = random_tensor({k, k, 3, 4}, seed++);
        Tensor bias = random_tensor({4}, seed++);
        Tensor y = conv2d(x, {kern, bias, stride, pad});
        expect_close(y, conv_oracle(x, kern, bias, stride, pad), 1e-12);
      }
    }
  }
}

TEST(Conv2d, SamePaddingPreservesExtentsForOddKernels) {
  for (std::size_t k = 1; k <= 7; k += 2) {
    Tensor x = random_tensor({1, 6, 5, 2}, k);
    Tensor y = conv2d(x, {random_tensor({k, k, 2, 3}, k + 50), Tensor({3}, 0.0), 1,
                          Padding::kSame});
    EXPECT_EQ(y.shape(), (Shape{1, 6, 5, 3}));
  }
}

TEST(Conv2d, Errors) {
  Tensor x = random_tensor({1, 4, 4, 3}, 2);
  EXPECT_THROW(conv2d(x, {Tensor({3, 3, 2, 1}), Tensor({1}), 1, Padding::kSame}),
               ShapeError);
  EXPECT_THROW(conv2d(Tensor({1, 0, 4, 3}),
                      {Tensor({3, 3, 3, 1}), Tensor({1}), 1, Padding::kSame}),
               ShapeError);
  EXPECT_THROW(conv2d(x, {Tensor({2, 2, 3, 1}), Tensor({1}), 1, Padding::kSame}),
               ShapeError);
  EXPECT_THROW(conv2d(x, {Tensor({3, 3, 3, 1}), Tensor({2}), 1, Padding::kSame}),
               ShapeError);
  EXPECT_THROW(conv2d(x, {Tensor({3, 3, 3, 1}), Tensor({1}), 0, Padding::kSame}),
               ShapeError);
  EXPECT_THROW(conv2d(x, {Tensor({5, 5, 3, 1}), Tensor({1}), 1, Padding::kValid}),
               ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor x = random_parameter({2, 5, 5, 2}, 200 + s);
    Tensor k = random_parameter({3, 3, 2, 3}, 210 + s);
    Tensor b = random_parameter({3}, 220 + s);
    const double err =
        max_fd_error([&] { return conv2d(x, {k, b, 2, Padding::kSame}); }, {x, k, b});
    EXPECT_LE(err, 1e-6);
  }
}

TEST(SeparableConv2d, UnitKernelIsBroadcastMultiply) {
  Tensor x = random_tensor({2, 4, 4, 3}, 3);
  Tensor dw({1, 1, 3}, {0.5, -1.5, 2.0});
  EXPECT_EQ(to_vector(depthwise_conv2d(x, dw)), to_vector(mul(x, dw)));
}

TEST(SeparableConv2d, IdentityWeights) {
  Tensor x = random_tensor({1, 5, 5, 2}, 4);
  Tensor dw({3, 3, 2}, 0.0);
  dw.mutable_values()[4 * 2 + 0] = 1.0;
  dw.mutable_values()[4 * 2 + 1] = 1.0;
  Tensor pw({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor y = separable_conv2d(x, {dw, pw, Tensor({2}, 0.0)});
  expect_close(y, x, 0.0);
}

TEST(SeparableConv2d, EqualsComposedKernel) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t k = (s % 2 == 0) ? 3 : 1;
    Tensor x = random_tensor({2, 6, 5, 3}, 300 + s);
    Tensor dw = random_tensor({k, k, 3}, 310 + s);
    Tensor pw = random_tensor({1, 1, 3, 4}, 320 + s);
    Tensor bias = random_tensor({4}, 330 + s);
    // Full kernel K[i,j,ci,co] = dw[i,j,ci] * pw[ci,co].
    Tensor full({k, k, 3, 4});
    for (std::size_t ij = 0; ij < k * k; ++ij)
      for (std::size_t ci = 0; ci < 3; ++ci)
        for (std::size_t co = 0; co < 4; ++co)
          full.mutable_values()[(ij * 3 + ci) * 4 + co] =
              dw.at(ij * 3 + ci) * pw.at(ci * 4 + co);
    expect_close(separable_conv2d(x, {dw, pw, bias}),
                 conv2d(x, {full, bias, 1, Padding::kSame}), 1e-10);
  }
}

TEST(SeparableConv2d, Errors) {
  Tensor x = random_tensor({1, 4, 4, 3}, 5);
  EXPECT_THROW(depthwise_conv2d(x, Tensor({3, 3, 2})), ShapeError);
  EXPECT_THROW(separable_conv2d(x, {Tensor({3, 3, 3}), Tensor({3, 3, 3, 2}), Tensor({2})}),
               ShapeError);
}

TEST(SeparableConv2d, GradientMatchesFiniteDifferences) {
  Tensor x = random_parameter({1, 5, 4, 3}, 6);
  Tensor dw = random_parameter({3, 3, 3}, 7);
  Tensor pw = random_parameter({1, 1, 3, 2}, 8);
  Tensor b = random_parameter({2}, 9);
  EXPECT_LE(max_fd_error([&] { return separable_conv2d(x, {dw, pw, b}); },
                         {x, dw, pw, b}),
            1e-6);
}

TEST(GlobalPool, OnesAndSmallExample) {
  Tensor ones({1, 3, 2, 4}, 1.0);
  EXPECT_EQ(to_vector(global_pool(ones, PoolMode::kAvg)), std::vector<double>(4, 1.0));
  EXPECT_EQ(to_vector(global_pool(ones, PoolMode::kMax)), std::vector<double>(4, 1.0));
  Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(global_pool(x, PoolMode::kAvg).item(), 2.5);
  EXPECT_EQ(global_pool(x, PoolMode::kMax).item(), 4.0);
}

TEST(GlobalPool, AvgGradientUniformMaxGradientOneHot) {
  Tensor x = random_parameter({2, 3, 4, 2}, 10);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(global_pool(x, PoolMode::kAvg)));
  }
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 12.0);
  x.zero_grad();
  // Ties route to the first maximum.
  Tensor t = Tensor::parameter({1, 2, 2, 1}, {3, 5, 5, 1});
  {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(global_pool(t, PoolMode::kMax)));
  }
  EXPECT_EQ(std::vector<double>(t.grad().begin(), t.grad().end()),
            (std::vector<double>{0, 1, 0, 0}));
}

TEST(GlobalPool, GradientMatchesFiniteDifferences) {
  Tensor x = random_parameter({2, 3, 3, 4}, 11);
  EXPECT_LE(max_fd_error([&] { return global_pool(x, PoolMode::kAvg); }, {x}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return global_pool(x, PoolMode::kMax); }, {x}), 1e-6);
}

TEST(ChannelwisePool, SingleChannelIsIdentity) {
  Tensor x = random_tensor({2, 3, 3, 1}, 12);
  EXPECT_EQ(to_vector(channelwise_pool(x, PoolMode::kAvg)), to_vector(x));
  EXPECT_EQ(to_vector(channelwise_pool(x, PoolMode::kMax)), to_vector(x));
}

TEST(ChannelwisePool, SmallExample) {
  Tensor x({1, 1, 1, 3}, {2, 4, 6});
  EXPECT_EQ(channelwise_pool(x, PoolMode::kAvg).item(), 4.0);
  EXPECT_EQ(channelwise_pool(x, PoolMode::kMax).item(), 6.0);
  EXPECT_EQ(channelwise_pool(x, PoolMode::kAvg).shape(), (Shape{1, 1, 1, 1}));
}

TEST(ChannelwisePool, MatchesLoopOracleAndFiniteDifferences) {
  Tensor x = random_parameter({1, 3, 3, 5}, 13);
  Tensor avg = channelwise_pool(x, PoolMode::kAvg);
  Tensor mx = channelwise_pool(x, PoolMode::kMax);
  for (std::size_t p = 0; p < 9; ++p) {
    double s = 0.0, m = -1e300;
    for (std::size_t c = 0; c < 5; ++c) {
      s += x.at(p * 5 + c);
      m = std::max(m, x.at(p * 5 + c));
    }
    EXPECT_NEAR(avg.at(p), s / 5.0, 1e-15);
    EXPECT_EQ(mx.at(p), m);
  }
  EXPECT_LE(max_fd_error([&] { return channelwise_pool(x, PoolMode::kAvg); }, {x}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return channelwise_pool(x, PoolMode::kMax); }, {x}), 1e-6);
}

TEST(ChannelwisePool, RejectsWrongRank) {
  EXPECT_THROW(channelwise_pool(Tensor({3, 3}), PoolMode::kAvg), ShapeError);
}

TEST(Dense, ZeroWeightsSigmoidGivesHalf) {
  Tensor x = random_tensor({3, 4}, 14);
  Tensor y = dense(x, {Tensor({4, 2}, 0.0), Tensor({2}, 0.0)}, Activation::kSigmoid);
  for (double v : y.values()) EXPECT_EQ(v, 0.5);
}

TEST(Dense, IdentityRelu) {
  Tensor y = dense(Tensor({1, 2}, {-1, 2}), {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, 0.0)},
                   Activation::kRelu);
  EXPECT_EQ(to_vector(y), (std::vector<double>{0, 2}));
}

TEST(Dense, GradientAndErrors) {
  Tensor x = random_parameter({3, 4}, 15);
  Tensor w = random_parameter({4, 2}, 16);
  Tensor b = random_parameter({2}, 17);
  EXPECT_LE(max_fd_error([&] { return dense(x, {w, b}, Activation::kSigmoid); }, {x, w, b}),
            1e-6);
  EXPECT_THROW(dense(x, {Tensor({3, 2}), Tensor({2})}), ShapeError);
}

TEST(Concat, DoublesChannels) {
  Tensor x = random_tensor({1, 2, 2, 3}, 18);
  Tensor y = concat_channels(x, x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 6}));
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(p * 6 + c), y.at(p * 6 + c + 3));
}

TEST(Concat, OrderPreservedAndGradientSplit) {
  Tensor a = random_parameter({2, 2, 1, 2}, 19);
  Tensor b = random_parameter({2, 2, 1, 3}, 20);
  Tensor y = concat_channels(a, b);
  ASSERT_EQ(y.dim(3), 5u);
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.at(p * 5 + c), a.at(p * 2 + c));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(p * 5 + 2 + c), b.at(p * 3 + c));
  }
  EXPECT_LE(max_fd_error([&] { return concat_channels(a, b); }, {a, b}), 1e-6);
  EXPECT_THROW(concat_channels(a, Tensor({2, 1, 1, 3})), ShapeError);
}

TEST(SelectChannels, GathersInOrder) {
  Tensor x({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const std::size_t idx[] = {2, 0};
  EXPECT_EQ(to_vector(select_channels(x, idx)), (std::vector<double>{3, 1, 6, 4}));
  const std::size_t bad[] = {3};
  EXPECT_THROW(select_channels(x, bad), ShapeError);
}

TEST(Activations, Examples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  Tensor s = softmax(Tensor({1, 3}, 0.0));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor big = softmax(Tensor({1, 2}, {1000, 0}));
  EXPECT_EQ(big.at(0), 1.0);
  EXPECT_NEAR(big.at(1), 0.0, 1e-300);
  EXPECT_NEAR(stable_sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_EQ(stable_sigmoid(800.0), 1.0);
}

TEST(Activations, SoftmaxRowsSumToOne) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Tensor x = random_tensor({4, 7}, 400 + s, -30.0, 30.0);
    Tensor p = softmax(x);
    Tensor lp = log_softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        const double v = p.at(r * 7 + k);
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        EXPECT_NEAR(std::log(v), lp.at(r * 7 + k), 1e-12);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Activations, RejectNaN) {
  EXPECT_THROW(softmax(Tensor({1, 2}, {0.0, std::nan("")})), NumericError);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  Tensor x = random_parameter({3, 5}, 21, -3.0, 3.0);
  EXPECT_LE(max_fd_error([&] { return sigmoid(x); }, {x}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return relu(x); }, {x}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return softmax(x); }, {x}), 1e-6);
  EXPECT_LE(max_fd_error([&] { return log_softmax(x); }, {x}), 1e-6);
}

}  // namespace
}  // namespace fanet
