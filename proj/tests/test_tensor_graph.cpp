#include <gtest/gtest.h>

#include "test_util.hpp"
#include "uformer/conv.hpp"
#include "uformer/ops.hpp"

using namespace uformer;
using testutil::expect_grads_match;
using testutil::rand_tensor;
using testutil::weighted_sum;
namespace op = uformer::ops;

namespace {

TEST(Tensor, ConstructionAndReshape) {
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.strides(), (std::vector<std::int64_t>{3, 1}));
  for (std::int64_t i = 0; i < 6; ++i) EXPECT_EQ(t[i], 0.0);

  Tensor<double> r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, -1}), ShapeError);
  EXPECT_THROW((Tensor<double>({2, 2}, {1.0, 2.0})), ShapeError);

  Tensor<double> s = Tensor<double>::scalar(7.0);
  EXPECT_EQ(s.numel(), 1);
  EXPECT_TRUE(s.shape().empty());
}

TEST(Tensor, BroadcastShapes) {
  EXPECT_EQ(broadcast_shapes({2, 3}, {2, 3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shapes({2, 1}, {1, 3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shapes({3}, {2, 3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shapes({}, {2, 3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shapes({4, 1, 5}, {2, 5}), (Shape{4, 2, 5}));
  EXPECT_THROW(broadcast_shapes({2, 3}, {2, 4}), ShapeError);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform();
    EXPECT_EQ(va, b.uniform());
    EXPECT_GE(va, 0.0);
    EXPECT_LT(va, 1.0);
  }
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs = differs || a.uniform() != c.uniform();
  EXPECT_TRUE(differs);
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  Rng rng(7);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, UniformIntCoversRange) {
  Rng rng(11);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.uniform_int(2, 6);
    ASSERT_GE(v, 2);
    ASSERT_LE(v, 6);
    ++hits[static_cast<std::size_t>(v - 2)];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, DerivedSeedsSpread) {
  const auto a = derive_seed(1, 0);
  const auto b = derive_seed(1, 1);
  const auto c = derive_seed(2, 0);
  EXPECT_NE(a, b);
  EXPECT_NE(a, c);
}

// ---------------------------------------------------------------------------
// Tape fundamentals
// ---------------------------------------------------------------------------

TEST(Graph, SumOfSquaresGradientIsExact) {
  Graph<double> g;
  Tensor<double> w({4}, {1.0, -2.0, 0.5, 3.0});
  Value<double> wv = g.leaf(w, true);
  Value<double> loss = op::sum_all(op::square(wv));
  g.backward(loss);
  const Tensor<double>& grad = g.grad(wv.id);
  for (std::int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(grad[i], 2.0 * w[i]);
}

TEST(Graph, UnusedParameterGetsNoGradient) {
  Graph<double> g;
  Value<double> used = g.leaf(Tensor<double>::scalar(2.0), true);
  Value<double> unused = g.leaf(Tensor<double>::scalar(5.0), true);
  Value<double> loss = op::square(used);
  g.backward(loss);
  EXPECT_TRUE(g.has_grad(used.id));
  EXPECT_FALSE(g.has_grad(unused.id));
}

TEST(Graph, BackwardRequiresScalarRoot) {
  Graph<double> g;
  Value<double> x = g.leaf(Tensor<double>({2}), true);
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Graph, ReusedNodeAccumulatesGradient) {
  // loss = x * x via two references to the same node: d/dx = 2x.
  Graph<double> g;
  Value<double> x = g.leaf(Tensor<double>::scalar(3.0), true);
  Value<double> loss = op::mul(x, x);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(x.id)[0], 6.0);
}

TEST(Graph, NonFiniteForwardIsDiagnosed) {
  Graph<double> g;
  Scope<double> scope(g, "layer3");
  Value<double> x = g.leaf(Tensor<double>::scalar(0.0), true);
  try {
    op::log(x);
    FAIL() << "log(0) should throw";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer3/log"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Per-op finite-difference checks, double precision
// ---------------------------------------------------------------------------

TEST(OpGrad, BinaryArithmeticWithBroadcast) {
  Rng rng(100);
  for (auto [sa, sb] : std::vector<std::pair<Shape, Shape>>{
           {{2, 3}, {2, 3}}, {{2, 3}, {3}}, {{2, 1, 4}, {3, 1}}, {{}, {2, 2}}}) {
    auto a = rand_tensor(sa, rng, 0.5, 2.0);
    auto b = rand_tensor(sb, rng, 0.5, 2.0);
    expect_grads_match(
        [](Graph<double>&, const std::vector<Value<double>>& in) {
          auto s = op::add(in[0], in[1]);
          auto d = op::sub(in[0], in[1]);
          auto m = op::mul(in[0], in[1]);
          auto q = op::div(in[0], in[1]);
          return weighted_sum(op::add(op::add(s, d), op::add(m, q)));
        },
        {a, b});
  }
}

TEST(OpGrad, PointwiseNonlinearities) {
  Rng rng(101);
  auto x = rand_tensor({3, 4}, rng, -2.0, 2.0);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        auto y = op::add(op::sigmoid(in[0]), op::tanh(in[0]));
        y = op::add(y, op::swish(in[0]));
        y = op::add(y, op::cos(in[0]));
        y = op::add(y, op::sin(in[0]));
        y = op::add(y, op::square(in[0]));
        y = op::add(y, op::scale(in[0], 1.7));
        y = op::add(y, op::shift(in[0], 0.3));
        return weighted_sum(y);
      },
      {x});
}

TEST(OpGrad, PositiveDomainOps) {
  Rng rng(102);
  auto x = rand_tensor({10}, rng, 0.5, 3.0);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        auto y = op::add(op::sqrt(in[0]), op::log(in[0]));
        return weighted_sum(op::add(y, op::exp(op::neg(in[0]))));
      },
      {x});
}

TEST(OpGrad, AbsAwayFromKink) {
  Rng rng(103);
  Tensor<double> x({8});
  for (std::int64_t i = 0; i < 8; ++i)
    x[i] = (i % 2 ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::abs(in[0]));
      },
      {x});
}

TEST(OpGrad, Atan2) {
  Rng rng(104);
  // Keep radii comfortably away from the origin where the op is smooth.
  Tensor<double> im({6}), re({6});
  for (std::int64_t i = 0; i < 6; ++i) {
    const double r = rng.uniform(0.5, 2.0);
    const double th = rng.uniform(-3.0, 3.0);
    re[i] = r * std::cos(th);
    im[i] = r * std::sin(th);
  }
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::atan2(in[0], in[1]));
      },
      {im, re});
}

TEST(Op, Atan2OriginConvention) {
  Graph<double> g;
  Value<double> z = g.leaf(Tensor<double>::scalar(0.0), true);
  Value<double> y = op::atan2(z, z);
  EXPECT_EQ(y.val()[0], 0.0);
  g.backward(op::square(y));
  EXPECT_EQ(g.grad(z.id)[0], 0.0);
}

TEST(Op, SwishAtOnePinned) {
  Graph<double> g;
  Value<double> one = g.leaf(Tensor<double>::scalar(1.0), false);
  EXPECT_NEAR(op::swish(one).val()[0], 0.7310585786300049, 1e-15);
}

TEST(OpGrad, PReLU) {
  Rng rng(105);
  Tensor<double> x = rand_tensor({2, 3, 2, 2}, rng, -2.0, 2.0);
  // Nudge anything sitting near the kink.
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = 0.1;
  Tensor<double> alpha({3}, {0.25, -0.3, 0.8});
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::prelu(in[0], in[1]));
      },
      {x, alpha});
}

TEST(Op, SoftmaxRowsSumToOne) {
  Rng rng(106);
  Graph<double> g;
  Value<double> x = g.leaf(rand_tensor({3, 5, 4}, rng, -30.0, 30.0), false);
  for (std::size_t axis : {0u, 1u, 2u}) {
    Value<double> y = op::softmax(x, axis);
    Value<double> sums = op::sum_axis(y, axis);
    for (std::int64_t i = 0; i < sums.val().numel(); ++i)
      EXPECT_NEAR(sums.val()[i], 1.0, 1e-12);
    for (std::int64_t i = 0; i < y.val().numel(); ++i) {
      EXPECT_GE(y.val()[i], 0.0);
      EXPECT_LE(y.val()[i], 1.0);
    }
  }
}

TEST(Op, SoftmaxSingletonAxisIsOne) {
  Graph<double> g;
  Value<double> x = g.leaf(Tensor<double>({2, 1, 3}, {5, -2, 9, 0, 1, -7}), false);
  Value<double> y = op::softmax(x, 1);
  for (std::int64_t i = 0; i < y.val().numel(); ++i)
    EXPECT_DOUBLE_EQ(y.val()[i], 1.0);
}

TEST(OpGrad, SoftmaxAllAxes) {
  Rng rng(107);
  auto x = rand_tensor({2, 3, 4}, rng, -2.0, 2.0);
  for (std::size_t axis : {0u, 1u, 2u}) {
    expect_grads_match(
        [axis](Graph<double>&, const std::vector<Value<double>>& in) {
          return weighted_sum(op::softmax(in[0], axis));
        },
        {x});
  }
}

TEST(OpGrad, DropoutMatchesItsOwnMask) {
  Rng rng(108);
  auto x = rand_tensor({4, 5}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        Rng drop(99);  // identical mask on every rebuild
        return weighted_sum(op::dropout(in[0], 0.4, drop));
      },
      {x});
}

TEST(Op, DropoutZeroProbabilityIsIdentity) {
  Graph<double> g;
  Rng rng(1);
  Value<double> x = g.leaf(Tensor<double>({3}, {1, 2, 3}), true);
  Value<double> y = op::dropout(x, 0.0, rng);
  EXPECT_EQ(y.id, x.id);
  EXPECT_THROW(op::dropout(x, 1.0, rng), ValueError);
}

TEST(Op, DropoutKeepsExpectedScale) {
  Graph<double> g;
  Rng rng(2);
  Value<double> x = g.leaf(Tensor<double>::full({10000}, 1.0), false);
  Value<double> y = op::dropout(x, 0.25, rng);
  double mean = 0.0;
  int zeros = 0;
  for (std::int64_t i = 0; i < y.val().numel(); ++i) {
    mean += y.val()[i];
    zeros += y.val()[i] == 0.0;
  }
  mean /= static_cast<double>(y.val().numel());
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.25, 0.03);
}

TEST(OpGrad, Reductions) {
  Rng rng(109);
  auto x = rand_tensor({2, 3, 4}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        auto a = op::sum_axis(in[0], 1);              // [2, 4]
        auto b = op::sum_axis(in[0], 2, true);        // [2, 3, 1]
        auto c = op::mean_axis(in[0], 0);             // [3, 4]
        return op::add(op::add(weighted_sum(a), weighted_sum(b)),
                       op::add(weighted_sum(c), op::mean_all(in[0])));
      },
      {x});
}

TEST(Op, SumAxisValues) {
  Graph<double> g;
  Value<double> x = g.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), false);
  Value<double> rows = op::sum_axis(x, 1);
  EXPECT_EQ(rows.val().shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(rows.val()[0], 6.0);
  EXPECT_DOUBLE_EQ(rows.val()[1], 15.0);
  Value<double> cols = op::sum_axis(x, 0, true);
  EXPECT_EQ(cols.val().shape(), (Shape{1, 3}));
  EXPECT_DOUBLE_EQ(cols.val()[2], 9.0);
  EXPECT_DOUBLE_EQ(op::sum_all(x).val()[0], 21.0);
}

TEST(OpGrad, ShapeOps) {
  Rng rng(110);
  auto x = rand_tensor({2, 3, 4}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        auto r = op::reshape(in[0], {6, 4});
        auto p = op::permute(in[0], {2, 0, 1});
        auto s = op::slice(in[0], 2, 1, 2);
        return op::add(weighted_sum(r),
                       op::add(weighted_sum(p), weighted_sum(s)));
      },
      {x});
}

TEST(Op, PermuteValues) {
  Graph<double> g;
  Value<double> x = g.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), false);
  Value<double> y = op::permute(x, {1, 0});
  EXPECT_EQ(y.val().shape(), (Shape{3, 2}));
  EXPECT_DOUBLE_EQ(y.val()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.val()[1], 4.0);
  EXPECT_DOUBLE_EQ(y.val()[2], 2.0);
}

TEST(OpGrad, ConcatSeveralInputs) {
  Rng rng(111);
  auto a = rand_tensor({2, 2, 3}, rng);
  auto b = rand_tensor({2, 1, 3}, rng);
  auto c = rand_tensor({2, 4, 3}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::concat<double>({in[0], in[1], in[2]}, 1));
      },
      {a, b, c});
}

TEST(Op, ConcatValues) {
  Graph<double> g;
  Value<double> a = g.leaf(Tensor<double>({1, 2}, {1, 2}), false);
  Value<double> b = g.leaf(Tensor<double>({1, 3}, {3, 4, 5}), false);
  Value<double> y = op::concat<double>({a, b}, 1);
  EXPECT_EQ(y.val().shape(), (Shape{1, 5}));
  for (std::int64_t i = 0; i < 5; ++i)
    EXPECT_DOUBLE_EQ(y.val()[i], static_cast<double>(i + 1));
  EXPECT_THROW(op::concat<double>({a, g.leaf(Tensor<double>({2, 2}), false)}, 1),
               ShapeError);
}

TEST(Op, UnfoldTimeGathersAndZeroPads) {
  Graph<double> g;
  // One batch, one channel, T=4, F=1 with x[t] = t + 1.
  Value<double> x = g.leaf(Tensor<double>({1, 1, 4, 1}, {1, 2, 3, 4}), false);
  Value<double> y = op::unfold_time(x, {-1, 0, 1});
  EXPECT_EQ(y.val().shape(), (Shape{1, 1, 3, 4, 1}));
  // j = 0 is the past frame: [0, 1, 2, 3].
  EXPECT_DOUBLE_EQ(y.val()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.val()[1], 1.0);
  // j = 1 is the current frame.
  EXPECT_DOUBLE_EQ(y.val()[4], 1.0);
  EXPECT_DOUBLE_EQ(y.val()[7], 4.0);
  // j = 2 is the future frame: [2, 3, 4, 0].
  EXPECT_DOUBLE_EQ(y.val()[8], 2.0);
  EXPECT_DOUBLE_EQ(y.val()[11], 0.0);
}

TEST(OpGrad, UnfoldTime) {
  Rng rng(112);
  auto x = rand_tensor({2, 2, 5, 3}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::unfold_time(in[0], {-2, 0, 3}));
      },
      {x});
}

TEST(OpGrad, MatmulAndLinearChannels) {
  Rng rng(113);
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::matmul(in[0], in[1]));
      },
      {a, b});

  auto x = rand_tensor({2, 3, 2, 2}, rng);
  auto w = rand_tensor({5, 3}, rng);
  auto bias = rand_tensor({5}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(op::linear_channels(in[0], in[1], in[2]));
      },
      {x, w, bias});
}

TEST(Op, MatmulIdentity) {
  Graph<double> g;
  Value<double> a = g.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}), false);
  Value<double> eye = g.leaf(Tensor<double>({2, 2}, {1, 0, 0, 1}), false);
  Value<double> y = op::matmul(a, eye);
  for (std::int64_t i = 0; i < 4; ++i)
    EXPECT_DOUBLE_EQ(y.val()[i], a.val()[i]);
  EXPECT_THROW(op::matmul(a, g.leaf(Tensor<double>({3, 2}), false)),
               ShapeError);
}

TEST(OpGrad, BatchNormTrainMode) {
  Rng rng(114);
  auto x = rand_tensor({3, 2, 2, 2}, rng);
  auto gamma = rand_tensor({2}, rng, 0.5, 1.5);
  auto beta = rand_tensor({2}, rng);
  expect_grads_match(
      [](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(
            op::batchnorm_train(in[0], in[1], in[2], 1e-5));
      },
      {x, gamma, beta});
}

TEST(Op, BatchNormNormalizesPerChannel) {
  Rng rng(115);
  Graph<double> g;
  Value<double> x = g.leaf(rand_tensor({4, 3, 5, 2}, rng, -3.0, 9.0), false);
  Value<double> gamma = g.leaf(Tensor<double>::full({3}, 1.0), false);
  Value<double> beta = g.leaf(Tensor<double>({3}), false);
  Tensor<double> mean, var;
  Value<double> y = op::batchnorm_train(x, gamma, beta, 1e-9, &mean, &var);
  // Per-channel output statistics collapse to (0, 1).
  const std::int64_t C = 3, S = 10, B = 4;
  for (std::int64_t c = 0; c < C; ++c) {
    double m = 0.0, v = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t s = 0; s < S; ++s)
        m += y.val()[(b * C + c) * S + s];
    m /= static_cast<double>(B * S);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t s = 0; s < S; ++s) {
        const double d = y.val()[(b * C + c) * S + s] - m;
        v += d * d;
      }
    v /= static_cast<double>(B * S);
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(OpGrad, BatchNormEvalMode) {
  Rng rng(116);
  auto x = rand_tensor({2, 2, 3}, rng);
  auto gamma = rand_tensor({2}, rng, 0.5, 1.5);
  auto beta = rand_tensor({2}, rng);
  Tensor<double> mean({2}, {0.3, -0.2});
  Tensor<double> var({2}, {1.5, 0.7});
  expect_grads_match(
      [mean, var](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(
            op::batchnorm_eval(in[0], in[1], in[2], mean, var, 1e-5));
      },
      {x, gamma, beta});
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

TEST(Conv, OutputSizeFormula) {
  // T axis of the encoder: kernel 2, stride 1, causal-style pad (1, 0).
  EXPECT_EQ(conv_out_size(10, 2, 1, 1, 1, 0), 10);
  // F axis of the encoder: kernel 5, stride 2, pad (2, 1).
  EXPECT_EQ(conv_out_size(257, 5, 2, 1, 2, 1), 128);
  EXPECT_EQ(conv_out_size(128, 5, 2, 1, 2, 1), 64);
  EXPECT_EQ(conv_out_size(4, 3, 1, 2, 2, 2), 4);
  EXPECT_THROW(conv_out_size(2, 5, 1, 1, 0, 0), ShapeError);
}

TEST(OpGrad, Conv2dGeometries) {
  Rng rng(117);
  struct Case {
    Shape x, w;
    ConvGeom geom;
  };
  std::vector<Case> cases;
  cases.push_back({{1, 2, 5, 6}, {3, 2, 2, 3}, {}});
  {
    ConvGeom gm;
    gm.stride_f = 2;
    gm.pad_t0 = 1;
    gm.pad_f0 = 2;
    gm.pad_f1 = 1;
    cases.push_back({{2, 2, 4, 7}, {3, 2, 2, 5}, gm});
  }
  {
    ConvGeom gm;
    gm.dil_t = 2;
    gm.dil_f = 3;
    gm.pad_t0 = 2;
    gm.pad_t1 = 1;
    gm.pad_f0 = 3;
    gm.pad_f1 = 3;
    cases.push_back({{1, 1, 6, 8}, {2, 1, 3, 3}, gm});
  }
  {
    ConvGeom gm;
    gm.groups = 2;
    cases.push_back({{1, 4, 4, 4}, {6, 2, 2, 2}, gm});
  }
  {
    ConvGeom gm;
    gm.groups = 4;  // depthwise
    gm.pad_t0 = 1;
    cases.push_back({{1, 4, 5, 3}, {4, 1, 2, 1}, gm});
  }
  for (const auto& c : cases) {
    auto x = rand_tensor(c.x, rng);
    auto w = rand_tensor(c.w, rng);
    auto b = rand_tensor({c.w[0]}, rng);
    expect_grads_match(
        [geom = c.geom](Graph<double>&, const std::vector<Value<double>>& in) {
          return weighted_sum(op::conv2d(in[0], in[1], in[2], geom));
        },
        {x, w, b});
  }
}

TEST(OpGrad, ConvTranspose2d) {
  Rng rng(118);
  // Mirror of an encoder stage: stride 2 over frequency, pad (2, 1).
  ConvGeom gm;
  gm.stride_f = 2;
  gm.pad_t0 = 1;
  gm.pad_f0 = 2;
  gm.pad_f1 = 1;
  const std::int64_t To = 4, Fo = 9;
  auto x = rand_tensor({2, 3, 4, 5}, rng);
  auto w = rand_tensor({3, 2, 2, 5}, rng);
  auto b = rand_tensor({2}, rng);
  expect_grads_match(
      [gm, To, Fo](Graph<double>&, const std::vector<Value<double>>& in) {
        return weighted_sum(
            op::conv_transpose2d(in[0], in[1], in[2], gm, To, Fo));
      },
      {x, w, b});
}

TEST(Conv, TransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> for matching geometry, the defining
  // property used by the decoder to invert encoder striding.
  Rng rng(119);
  ConvGeom gm;
  gm.stride_f = 2;
  gm.pad_t0 = 1;
  gm.pad_f0 = 2;
  gm.pad_f1 = 1;
  Tensor<double> x = rand_tensor({1, 2, 6, 9}, rng);
  Tensor<double> w = rand_tensor({3, 2, 2, 5}, rng);
  Tensor<double> y = conv_detail::conv2d_fwd<double>(x, w, nullptr, gm);
  Tensor<double> z = rand_tensor(y.shape(), rng);

  // The conv weight [Co, Ci, kT, kF] reads directly as the transposed conv's
  // [in, out, kT, kF], so the adjoint reuses the tensor unchanged.
  Tensor<double> xt = conv_detail::convt2d_fwd<double>(z, w, nullptr, gm, 6, 9);

  double lhs = 0.0, rhs = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) lhs += y[i] * z[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * xt[i];
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::abs(lhs));
}

}  // namespace
