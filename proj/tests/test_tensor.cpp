#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fanet/attention.hpp"
#include "fanet/gradcheck.hpp"
#include "fanet/tensor.hpp"
#include "test_util.hpp"

namespace fanet {
namespace {

using test::random_parameter;
using test::random_tensor;
using test::to_vector;

TEST(Tensor, AddElementwise) {
  Tensor r = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
  EXPECT_EQ(to_vector(r), (std::vector<double>{4, 6}));
}

TEST(Tensor, SubAndMul) {
  Tensor a({3}, {5, 7, 9});
  Tensor b({3}, {1, 2, 3});
  EXPECT_EQ(to_vector(sub(a, b)), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(to_vector(mul(a, b)), (std::vector<double>{5, 14, 27}));
}

TEST(Tensor, MulByOnesIsIdentity) {
  Tensor x = random_tensor({2, 3, 4}, 1);
  Tensor ones(x.shape(), 1.0);
  EXPECT_EQ(to_vector(mul(x, ones)), to_vector(x));
}

TEST(Tensor, ChannelWeightsBroadcastMatchesLoop) {
  Tensor x = random_tensor({2, 2, 3}, 2);
  Tensor w({3}, {0.5, -2.0, 3.0});
  Tensor r = mul(x, w);
  ASSERT_EQ(r.shape(), x.shape());
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t ww = 0; ww < 2; ++ww) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i = (h * 2 + ww) * 3 + c;
        EXPECT_EQ(r.at(i), x.at(i) * w.at(c));
      }
    }
  }
}

TEST(Tensor, IncompatibleShapesNameBoth) {
  try {
    add(Tensor({2, 3}), Tensor({2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(mul(Tensor({3}), Tensor({2, 3})), ShapeError);
}

// Every rank-<=4 shape with extents in {1,2,3,4} against every b that
// broadcasts to it: values and sum-reduced gradients versus explicit loops.
TEST(Tensor, BroadcastExhaustiveSmallShapes) {
  std::size_t cases = 0;
  auto check = [&](const Shape& a_shape, const Shape& b_shape) {
    Tensor a = random_parameter(a_shape, cases * 2 + 1);
    Tensor b = random_parameter(b_shape, cases * 2 + 2);
    Tape tape;
    TapeScope scope(tape);
    Tensor r = mul(a, b);
    ASSERT_EQ(r.shape(), a_shape);
    backward(sum(r));

    const std::size_t rank = a_shape.size();
    const std::size_t offset = rank - b_shape.size();
    std::vector<double> expect_gb(b.size(), 0.0);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < a.size(); ++flat) {
      std::size_t rem = flat;
      for (std::size_t ax = rank; ax-- > 0;) {
        idx[ax] = rem % a_shape[ax];
        rem /= a_shape[ax];
      }
      std::size_t bj = 0;
      for (std::size_t k = 0; k < b_shape.size(); ++k) {
        bj = bj * b_shape[k] + (b_shape[k] == 1 ? 0 : idx[k + offset]);
      }
      ASSERT_EQ(r.at(flat), a.at(flat) * b.at(bj));
      ASSERT_EQ(a.grad()[flat], b.at(bj));
      expect_gb[bj] += a.at(flat);
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
      ASSERT_NEAR(b.grad()[j], expect_gb[j], 1e-12);
    }
    ++cases;
  };

  std::function<void(Shape&, std::size_t)> grow = [&](Shape& a_shape,
                                                      std::size_t rank) {
    if (a_shape.size() == rank) {
      // b: drop any number of leading axes, then set any subset to 1.
      for (std::size_t drop = 0; drop < rank; ++drop) {
        const std::size_t br = rank - drop;
        for (std::size_t mask = 0; mask < (std::size_t{1} << br); ++mask) {
          Shape b_shape(a_shape.begin() + static_cast<std::ptrdiff_t>(drop),
                        a_shape.end());
          for (std::size_t k = 0; k < br; ++k) {
            if (mask & (std::size_t{1} << k)) b_shape[k] = 1;
          }
          check(a_shape, b_shape);
        }
      }
      return;
    }
    for (std::size_t e = 1; e <= 4; ++e) {
      a_shape.push_back(e);
      grow(a_shape, rank);
      a_shape.pop_back();
    }
  };
  for (std::size_t rank = 1; rank <= 4; ++rank) {
    Shape s;
    grow(s, rank);
  }
  EXPECT_EQ(cases, 8680u);
}

TEST(Tensor, MatmulExamples) {
  Tensor i2({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(to_vector(matmul(i2, m)), to_vector(m));
  Tensor r = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Tensor, MatmulInnerMismatch) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Tensor, MatmulGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor a = random_parameter({3, 4}, 10 + seed);
    Tensor b = random_parameter({4, 2}, 20 + seed);
    const Tensor params[] = {a, b};
    auto errs = finite_difference_check(
        [&] { return random_projection(matmul(a, b), 3); }, params);
    EXPECT_LE(errs[0], 1e-6);
    EXPECT_LE(errs[1], 1e-6);
  }
}

TEST(Tensor, BackwardOfSumIsOnes) {
  for (const Shape& s : {Shape{1}, Shape{3}, Shape{2, 3}, Shape{2, 1, 4, 3}}) {
    Tensor x = random_parameter(s, 5);
    Tape tape;
    TapeScope scope(tape);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  }
}

TEST(Tensor, BackwardOfSumOfSquares) {
  Tensor x = Tensor::parameter({3}, {1, 2, 3});
  Tape tape;
  TapeScope scope(tape);
  backward(sum(mul(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{2, 4, 6}));
}

TEST(Tensor, GradientsFromTwoPathsSum) {
  Tensor x = random_parameter({2, 3}, 6);
  Tape tape;
  TapeScope scope(tape);
  backward(add(sum(x), sum(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Tensor, BackwardRejectsNonScalar) {
  Tensor x = random_parameter({3}, 7);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(backward(y), AutodiffError);
}

TEST(Tensor, BackwardRejectsDetached) {
  Tensor x = random_parameter({3}, 8);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = sum(x).detach();
  EXPECT_THROW(backward(y), AutodiffError);
  Tensor plain = Tensor::scalar(1.0);
  EXPECT_THROW(backward(plain), AutodiffError);
}

TEST(Tensor, BackwardWithoutTape) {
  Tensor x = random_parameter({3}, 9);
  Tensor y = sum(x);
  EXPECT_FALSE(y.on_tape());
  EXPECT_THROW(backward(y), AutodiffError);
}

TEST(Tensor, ReshapeMeanScale) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
  EXPECT_DOUBLE_EQ(mean(x).item(), 3.5);
  EXPECT_EQ(to_vector(scale(x, -1.0))[5], -6.0);
}

TEST(Tensor, NonFiniteValueIsReported) {
  Tensor x({2}, {1e308, 1e308});
  EXPECT_THROW(add(x, x), NumericError);
}

TEST(Tensor, CloneIsDeepCopyHandlesShare) {
  Tensor x({2}, {1, 2});
  Tensor shared = x;
  Tensor copy = x.clone();
  x.mutable_values()[0] = 9;
  EXPECT_EQ(shared.at(0), 9.0);
  EXPECT_EQ(copy.at(0), 1.0);
}

TEST(Tensor, TextDumpRoundTrip) {
  Tensor x = random_tensor({2, 3}, 11, -1e3, 1e3);
  const std::string text = dump_text(x);
  EXPECT_EQ(text.substr(0, text.find('\n')), "2 3");
  Tensor y = parse_text(text);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(to_vector(y), to_vector(x));
  EXPECT_THROW(parse_text("2 2\n1 2 3\n"), DataError);
}

TEST(FiniteDifference, SumOfSquares) {
  Tensor x = random_tensor({4, 3}, 12);
  const double err = finite_difference_check(
      [](const Tensor& v) { return sum(mul(v, v)); }, x);
  EXPECT_LE(err, 1e-8);
}

TEST(FiniteDifference, ConstantFunction) {
  Tensor x = random_tensor({5}, 13);
  const double err =
      finite_difference_check([](const Tensor&) { return Tensor::scalar(4.0); }, x);
  EXPECT_EQ(err, 0.0);
}

TEST(FiniteDifference, RichardsGateSum) {
  Tensor x = random_tensor({8}, 14, -2.0, 2.0);
  Tensor a = Tensor::scalar(1.3), q = Tensor::scalar(0.7), mu = Tensor::scalar(0.2);
  const double err = finite_difference_check(
      [&](const Tensor& alpha) { return sum(richards_gate(alpha, a, q, mu)); }, x);
  EXPECT_LE(err, 1e-6);
}

TEST(FiniteDifference, RejectsNonScalarAndBadEps) {
  Tensor x = random_tensor({3}, 15);
  EXPECT_THROW(finite_difference_check([](const Tensor& v) { return scale(v, 2.0); }, x),
               AutodiffError);
  EXPECT_THROW(
      finite_difference_check([](const Tensor& v) { return sum(v); }, x, 0.0),
      ConfigError);
}

TEST(FiniteDifference, DetectsWrongGradient) {
  // 0.5 * sum(x * x.detach()) has true gradient x but tape gradient x / 2.
  Tensor x = random_tensor({4}, 16, 0.5, 1.0);
  const double err = finite_difference_check(
      [](const Tensor& v) { return scale(sum(mul(v, v.detach())), 0.5); }, x);
  EXPECT_GT(err, 0.3);
}

}  // namespace
}  // namespace fanet
