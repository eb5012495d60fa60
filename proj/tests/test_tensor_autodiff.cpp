#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "mscc/autodiff.hpp"
#include "mscc/checkpoint.hpp"
#include "mscc/gradcheck.hpp"
#include "mscc/ops.hpp"
#include "mscc/optim.hpp"

using namespace mscc;

namespace {

// Direct nested-loop cross-correlation with zero "same" padding.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor y({n, f, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t s = 0; s < w; ++s) {
          double acc = b[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                long rr = static_cast<long>(r + u) - ph, ss = static_cast<long>(s + v) - pw;
                if (rr < 0 || ss < 0 || rr >= static_cast<long>(h) || ss >= static_cast<long>(w)) continue;
                acc += x.at(i, ch, rr, ss) * k.at(o, ch, u, v);
              }
          y.at(i, o, r, s) = acc;
        }
  return y;
}

Tensor naive_transpose_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  Tensor y({n, f, h * stride, w * stride});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t r = 0; r < h * stride; ++r)
        for (std::size_t s = 0; s < w * stride; ++s) y.at(i, o, r, s) = b[o];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t s = 0; s < w; ++s)
          for (std::size_t o = 0; o < f; ++o)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                std::size_t rr = r * stride + u, ss = s * stride + v;
                if (rr < h * stride && ss < w * stride) y.at(i, o, rr, ss) += x.at(i, ch, r, s) * k.at(ch, o, u, v);
              }
  return y;
}

}  // namespace

TEST(Tensor, ShapeAndGradBuffer) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.has_grad());
  t.grad()[4] = 2.0;
  EXPECT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), t.size());
  t.zero_grad();
  EXPECT_EQ(t.grad()[4], 0.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(c.below(7), 7u);
  }
}

TEST(Conv2d, AllOnesKernelCountsNeighbours) {
  auto y = ops::conv2d(make_leaf(Tensor({1, 1, 3, 3}, 1.0)), make_leaf(Tensor({1, 1, 3, 3}, 1.0)),
                       make_leaf(Tensor({1}, 0.0)));
  EXPECT_DOUBLE_EQ(y->value.at(0, 0, 1, 1), 9.0);
  for (auto [r, c] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) EXPECT_DOUBLE_EQ(y->value.at(0, 0, r, c), 4.0);
  EXPECT_DOUBLE_EQ(y->value.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = random_uniform({2, 1, 5, 4}, -1, 1, rng);
  auto y = ops::conv2d(make_leaf(x), make_leaf(Tensor({1, 1, 1, 1}, 1.0)), make_leaf(Tensor({1}, 0.0)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y->value[i], x[i]);
}

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(3);
  for (auto [kh, kw] : {std::pair<std::size_t, std::size_t>{3, 3}, {1, 1}, {5, 5}, {3, 1}, {1, 3}, {7, 7}}) {
    auto x = random_uniform({2, 3, 7, 6}, -1, 1, rng);
    auto k = random_uniform({4, 3, kh, kw}, -1, 1, rng);
    auto b = random_uniform({4}, -1, 1, rng);
    auto y = ops::conv2d(make_leaf(x), make_leaf(k), make_leaf(b));
    auto ref = naive_conv(x, k, b);
    ASSERT_EQ(y->value.shape(), ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y->value[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ShapeArithmetic) {
  auto y = ops::conv2d(make_leaf(Tensor({1, 16, 64, 64}, 0.1)), make_leaf(Tensor({32, 16, 3, 3}, 0.01)),
                       make_leaf(Tensor({32}, 0.0)));
  EXPECT_EQ(y->value.shape(), (Shape{1, 32, 64, 64}));
}

TEST(Conv2d, RejectsBadOperands) {
  auto x = make_leaf(Tensor({1, 2, 4, 4}, 1.0));
  EXPECT_THROW(ops::conv2d(x, make_leaf(Tensor({1, 3, 3, 3})), make_leaf(Tensor({1}))), ShapeError);
  EXPECT_THROW(ops::conv2d(x, make_leaf(Tensor({1, 2, 2, 2})), make_leaf(Tensor({1}))), ShapeError);
  Tensor bad({1, 2, 4, 4}, 1.0);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ops::conv2d(make_leaf(bad), make_leaf(Tensor({1, 2, 3, 3})), make_leaf(Tensor({1}))), NonFiniteError);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(9);
  auto x = random_uniform({1, 2, 5, 5}, -1, 1, rng), z = random_uniform({1, 2, 5, 5}, -1, 1, rng);
  auto k = make_leaf(random_uniform({3, 2, 3, 3}, -1, 1, rng));
  auto b = make_leaf(random_uniform({3}, -1, 1, rng));
  const double a = 0.7, c = -1.3;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + c * z[i];
  auto lhs = ops::conv2d(make_leaf(mix), k, b)->value;
  auto cx = ops::conv2d(make_leaf(x), k, b)->value, cz = ops::conv2d(make_leaf(z), k, b)->value;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double bias = b->value[i / 25];
    ASSERT_NEAR(lhs[i], a * cx[i] + c * cz[i] - (a + c - 1) * bias, 1e-10);
  }
}

TEST(TransposeConv, ScatterArithmetic) {
  auto y = ops::transpose_conv2d(make_leaf(Tensor({1, 1, 1, 1}, 2.5)), make_leaf(Tensor({1, 1, 2, 2}, 1.0)),
                                 make_leaf(Tensor({1}, 0.0)));
  ASSERT_EQ(y->value.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y->value.values()) EXPECT_DOUBLE_EQ(v, 2.5);

  auto z = ops::transpose_conv2d(make_leaf(Tensor({1, 2, 3, 3}, 0.0)), make_leaf(Tensor({2, 3, 2, 2}, 0.4)),
                                 make_leaf(Tensor({3}, std::vector<double>{1, 2, 3})));
  for (std::size_t i = 0; i < z->value.size(); ++i) EXPECT_DOUBLE_EQ(z->value[i], 1.0 + static_cast<double>(i / 36));
}

TEST(TransposeConv, MatchesDirectLoops) {
  Rng rng(4);
  for (std::size_t k : {2u, 3u}) {
    auto x = random_uniform({2, 3, 4, 5}, -1, 1, rng);
    auto w = random_uniform({3, 2, k, k}, -1, 1, rng);
    auto b = random_uniform({2}, -1, 1, rng);
    auto y = ops::transpose_conv2d(make_leaf(x), make_leaf(w), make_leaf(b));
    auto ref = naive_transpose_conv(x, w, b, 2);
    ASSERT_EQ(y->value.shape(), ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y->value[i], ref[i], 1e-12);
  }
  auto big = ops::transpose_conv2d(make_leaf(Tensor({1, 256, 16, 16}, 0.0)), make_leaf(Tensor({256, 128, 2, 2})),
                                   make_leaf(Tensor({128})));
  EXPECT_EQ(big->value.shape(), (Shape{1, 128, 32, 32}));
}

TEST(BatchNorm, HandNormalization) {
  ops::RunningStats st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  auto x = make_leaf(Tensor({2, 1}, std::vector<double>{1, 3}));
  auto y = ops::batch_norm(x, make_leaf(Tensor({1}, 1.0)), make_leaf(Tensor({1}, 0.0)), ops::Mode::Train, st,
                           {0.0, 0.1});
  EXPECT_DOUBLE_EQ(y->value[0], -1.0);
  EXPECT_DOUBLE_EQ(y->value[1], 1.0);
  // Running update: mean 0.9*0 + 0.1*2, var 0.9*1 + 0.1*1.
  EXPECT_NEAR(st.mean[0], 0.2, 1e-15);
  EXPECT_NEAR(st.var[0], 1.0, 1e-15);

  ops::RunningStats st2{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  auto z = ops::batch_norm(x, make_leaf(Tensor({1}, 2.0)), make_leaf(Tensor({1}, 5.0)), ops::Mode::Train, st2,
                           {0.0, 0.1});
  EXPECT_DOUBLE_EQ(z->value[0], 3.0);
  EXPECT_DOUBLE_EQ(z->value[1], 7.0);
}

TEST(BatchNorm, InferWithUnitStatsIsIdentity) {
  Rng rng(2);
  auto x = random_uniform({2, 3, 4, 4}, -2, 2, rng);
  ops::RunningStats st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  auto y = ops::batch_norm(make_leaf(x), make_leaf(Tensor({3}, 1.0)), make_leaf(Tensor({3}, 0.0)), ops::Mode::Infer,
                           st, {0.0, 0.1});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y->value[i], x[i]);
}

TEST(BatchNorm, ConstantChannelStaysFinite) {
  ops::RunningStats st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  auto x = make_leaf(Tensor({4, 1, 2, 2}, 3.0), true);
  auto y = ops::batch_norm(x, make_leaf(Tensor({1}, 1.0), true), make_leaf(Tensor({1}, 0.5), true), ops::Mode::Train,
                           st);
  for (double v : y->value.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  backward(y, Tensor(y->value.shape(), 1.0));
  EXPECT_TRUE(x->value.all_finite());
  for (double g : std::as_const(x->value).grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(MaxPool, WindowsAndTieRule) {
  auto y = ops::maxpool2x2(make_leaf(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})));
  EXPECT_EQ(y->value.size(), 1u);
  EXPECT_EQ(y->value[0], 4.0);

  auto x = make_leaf(Tensor({1, 1, 4, 4}, 2.0), true);
  auto z = ops::maxpool2x2(x);
  backward(z, Tensor(z->value.shape(), 1.0));
  auto g = std::as_const(x->value).grad();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(g[r * 4 + c], (r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0);

  EXPECT_EQ(ops::maxpool2x2(make_leaf(Tensor({1, 8, 64, 64})))->value.shape(), (Shape{1, 8, 32, 32}));
  EXPECT_THROW(ops::maxpool2x2(make_leaf(Tensor({1, 1, 3, 4}))), ShapeError);
}

TEST(Concat, ChannelOrderAndSplit) {
  Rng rng(6);
  auto a = make_leaf(random_uniform({1, 16, 8, 8}, -1, 1, rng), true);
  auto b = make_leaf(random_uniform({1, 32, 8, 8}, -1, 1, rng), true);
  auto y = ops::concat_channels({a, b});
  ASSERT_EQ(y->value.shape(), (Shape{1, 48, 8, 8}));
  EXPECT_EQ(y->value.at(0, 0, 3, 4), a->value.at(0, 0, 3, 4));
  EXPECT_EQ(y->value.at(0, 20, 1, 2), b->value.at(0, 4, 1, 2));
  auto single = ops::concat_channels({a});
  for (std::size_t i = 0; i < a->value.size(); ++i) EXPECT_EQ(single->value[i], a->value[i]);
  EXPECT_THROW(ops::concat_channels({a, make_leaf(Tensor({1, 2, 4, 8}))}), ShapeError);
}

TEST(Activations, SoftmaxAndSigmoidRanges) {
  Rng rng(8);
  auto logits = random_uniform({5, 4}, -30, 30, rng);
  auto p = ops::softmax(make_leaf(logits));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += p->value[r * 4 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto u = ops::softmax(make_leaf(Tensor({1, 3}, 0.25)));
  for (double v : u->value.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  auto s = ops::sigmoid(make_leaf(Tensor({3}, std::vector<double>{-30, 0, 30})));
  for (double v : s->value.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(s->value[1], 0.5);
  auto r = ops::relu(make_leaf(Tensor({2}, std::vector<double>{-1, 2})));
  EXPECT_EQ(r->value[0], 0.0);
  EXPECT_EQ(r->value[1], 2.0);
}

TEST(Losses, ClosedForms) {
  auto half = ops::binary_cross_entropy(make_leaf(Tensor({1}, 0.5)), Tensor({1}, 1.0));
  EXPECT_NEAR(half->value[0], std::log(2.0), 1e-15);
  auto perfect = ops::binary_cross_entropy(make_leaf(Tensor({1}, 1.0 - ops::kProbClamp)), Tensor({1}, 1.0));
  EXPECT_NEAR(perfect->value[0], 0.0, 1e-6);
  auto clamped = ops::binary_cross_entropy(make_leaf(Tensor({1}, 0.0)), Tensor({1}, 1.0));
  EXPECT_NEAR(clamped->value[0], -std::log(ops::kProbClamp), 1e-9);
  EXPECT_THROW(ops::binary_cross_entropy(make_leaf(Tensor({1}, 0.5)), Tensor({1}, 0.5)), std::invalid_argument);

  Tensor probs({2, 2}, std::vector<double>{0.25, 0.75, 0.5, 0.5});
  Tensor onehot({2, 2}, std::vector<double>{0, 1, 1, 0});
  auto cce = ops::categorical_cross_entropy(make_leaf(probs), onehot);
  EXPECT_NEAR(cce->value[0], -(std::log(0.75) + std::log(0.5)) / 2, 1e-15);
  EXPECT_THROW(ops::categorical_cross_entropy(make_leaf(probs), Tensor({2, 2}, 0.5)), std::invalid_argument);
}

TEST(Dense, ForwardMatchesMatrixProduct) {
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor w({2, 3}, std::vector<double>{1, 0, -1, 0.5, 0.5, 0.5});
  Tensor b({2}, std::vector<double>{0.1, -0.1});
  auto y = ops::dense(make_leaf(x), make_leaf(w), make_leaf(b));
  EXPECT_NEAR(y->value[0], -2 + 0.1, 1e-15);
  EXPECT_NEAR(y->value[1], 3 - 0.1, 1e-15);
  EXPECT_NEAR(y->value[2], -2 + 0.1, 1e-15);
  EXPECT_NEAR(y->value[3], 7.5 - 0.1, 1e-15);
}

// Each primitive against central differences on random instances.
class GradCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradCheck, AllPrimitives) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  auto check = [&](const char* what, const GraphFragment& f, std::vector<Tensor> in) {
    auto rep = finite_difference_check(f, std::move(in), 1e-5, seed);
    EXPECT_LT(rep.max_relative_error, 1e-4) << what << " seed " << seed << " input " << rep.input_index << " elem "
                                            << rep.element_index;
    EXPECT_GT(rep.checked, 0u);
  };
  check("conv3x3", [](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2]); },
        {random_uniform({2, 3, 6, 6}, -1, 1, rng), random_uniform({2, 3, 3, 3}, -1, 1, rng),
         random_uniform({2}, -1, 1, rng)});
  check("conv3x1", [](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2]); },
        {random_uniform({1, 2, 5, 4}, -1, 1, rng), random_uniform({3, 2, 3, 1}, -1, 1, rng),
         random_uniform({3}, -1, 1, rng)});
  check("conv valid stride2",
        [](const std::vector<Var>& v) { return ops::conv2d(v[0], v[1], v[2], 2, ops::Padding::Valid); },
        {random_uniform({1, 2, 7, 7}, -1, 1, rng), random_uniform({2, 2, 3, 3}, -1, 1, rng),
         random_uniform({2}, -1, 1, rng)});
  check("upconv", [](const std::vector<Var>& v) { return ops::transpose_conv2d(v[0], v[1], v[2]); },
        {random_uniform({2, 3, 3, 3}, -1, 1, rng), random_uniform({3, 2, 2, 2}, -1, 1, rng),
         random_uniform({2}, -1, 1, rng)});
  check("batchnorm train",
        [](const std::vector<Var>& v) {
          ops::RunningStats st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
          return ops::batch_norm(v[0], v[1], v[2], ops::Mode::Train, st);
        },
        {random_uniform({4, 2, 4, 4}, -1, 1, rng), random_uniform({2}, 0.5, 1.5, rng),
         random_uniform({2}, -1, 1, rng)});
  check("batchnorm infer",
        [](const std::vector<Var>& v) {
          ops::RunningStats st{Tensor({2}, std::vector<double>{0.3, -0.2}), Tensor({2}, std::vector<double>{1.5, 0.7})};
          return ops::batch_norm(v[0], v[1], v[2], ops::Mode::Infer, st);
        },
        {random_uniform({2, 2, 3, 3}, -1, 1, rng), random_uniform({2}, 0.5, 1.5, rng),
         random_uniform({2}, -1, 1, rng)});
  check("maxpool", [](const std::vector<Var>& v) { return ops::maxpool2x2(v[0]); },
        {random_uniform({2, 2, 4, 6}, -1, 1, rng)});
  check("concat", [](const std::vector<Var>& v) { return ops::concat_channels({v[0], v[1], v[2]}); },
        {random_uniform({2, 1, 3, 3}, -1, 1, rng), random_uniform({2, 2, 3, 3}, -1, 1, rng),
         random_uniform({2, 3, 3, 3}, -1, 1, rng)});
  {
    // Keep inputs away from the kink so central differences are exact.
    auto x = random_uniform({2, 3, 4, 4}, -1, 1, rng);
    for (auto& v : x.values())
      if (std::abs(v) < 1e-3) v = 0.5;
    check("relu", [](const std::vector<Var>& v) { return ops::relu(v[0]); }, {x});
  }
  check("sigmoid", [](const std::vector<Var>& v) { return ops::sigmoid(v[0]); },
        {random_uniform({2, 3, 4, 4}, -4, 4, rng)});
  check("softmax", [](const std::vector<Var>& v) { return ops::softmax(v[0]); },
        {random_uniform({4, 5}, -3, 3, rng)});
  check("flatten+dense", [](const std::vector<Var>& v) { return ops::dense(ops::flatten(v[0]), v[1], v[2]); },
        {random_uniform({3, 2, 2, 2}, -1, 1, rng), random_uniform({4, 8}, -1, 1, rng),
         random_uniform({4}, -1, 1, rng)});
  {
    Tensor target({2, 1, 3, 3});
    for (auto& v : target.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    check("bce", [target](const std::vector<Var>& v) { return ops::binary_cross_entropy(v[0], target); },
          {random_uniform({2, 1, 3, 3}, 0.05, 0.95, rng)});
  }
  {
    Tensor onehot({4, 3}, 0.0);
    for (std::size_t r = 0; r < 4; ++r) onehot[r * 3 + rng.below(3)] = 1.0;
    check("softmax+cce",
          [onehot](const std::vector<Var>& v) { return ops::categorical_cross_entropy(ops::softmax(v[0]), onehot); },
          {random_uniform({4, 3}, -2, 2, rng)});
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, GradCheck, ::testing::Range(1, 11));

TEST(GradCheckHarness, LinearIsExact) {
  Rng rng(1);
  auto rep = finite_difference_check(
      [](const std::vector<Var>& v) { return ops::dense(v[0], v[1], v[2]); },
      {random_uniform({2, 3}, -1, 1, rng), random_uniform({2, 3}, -1, 1, rng), random_uniform({2}, -1, 1, rng)});
  EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(Autodiff, GradientsAccumulateOverSharedNodes) {
  auto x = make_leaf(Tensor({1, 1, 1, 1}, 3.0), true);
  auto y = ops::concat_channels({x, x});
  backward(ops::weighted_sum(y, Tensor({1, 2, 1, 1}, std::vector<double>{1, 2})));
  EXPECT_DOUBLE_EQ(std::as_const(x->value).grad()[0], 3.0);
}

TEST(Adam, ZeroGradientIsIdentity) {
  Rng rng(11);
  auto p = make_leaf(random_uniform({3, 3}, -1, 1, rng), true);
  std::vector<NamedParameter> params{{"p", p}};
  AdamState st;
  p->value.grad()[0] = 0.3;
  adam_step(params, st);  // build up nonzero moments
  const auto before = std::vector<double>(p->value.values().begin(), p->value.values().end());
  p->value.zero_grad();
  adam_step(params, st);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p->value[i], before[i]);
  EXPECT_EQ(st.t, 2u);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  auto p = make_leaf(Tensor({1}, 1.0), true);
  std::vector<NamedParameter> params{{"w", p}};
  AdamState st;
  st.config.lr = 1.5e-4;
  p->value.grad()[0] = -0.02;
  adam_step(params, st);
  EXPECT_NEAR(p->value[0] - 1.0, 1.5e-4, 1e-9);
}

TEST(Adam, TwoStepRecurrence) {
  auto p = make_leaf(Tensor({1}, 0.0), true);
  std::vector<NamedParameter> params{{"w", p}};
  AdamState st;
  const double g = 0.5, b1 = 0.9, b2 = 0.999, lr = st.config.lr, eps = st.config.epsilon;
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    p->value.grad()[0] = g;
    adam_step(params, st);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_EQ(st.t, 2u);
  EXPECT_NEAR(st.m[0][0], m, 1e-15);
  EXPECT_NEAR(st.v[0][0], v, 1e-15);
  EXPECT_NEAR(p->value[0], x, 1e-15);
}

TEST(Adam, NonFiniteGradientRejectedWithName) {
  auto a = make_leaf(Tensor({2}, 1.0), true), b = make_leaf(Tensor({2}, 1.0), true);
  std::vector<NamedParameter> params{{"conv.weight", a}, {"conv.bias", b}};
  AdamState st;
  a->value.grad()[0] = 1.0;
  b->value.grad()[1] = std::numeric_limits<double>::infinity();
  try {
    adam_step(params, st);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("conv.bias"), std::string::npos);
  }
  EXPECT_EQ(a->value[0], 1.0);
  EXPECT_EQ(st.t, 0u);
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical) {
  auto run = [] {
    Rng rng(21);
    auto x = make_leaf(random_uniform({2, 3, 8, 8}, -1, 1, rng), true);
    auto k = make_leaf(random_uniform({4, 3, 3, 3}, -1, 1, rng), true);
    auto b = make_leaf(random_uniform({4}, -1, 1, rng), true);
    ops::RunningStats st{Tensor({4}, 0.0), Tensor({4}, 1.0)};
    auto y = ops::maxpool2x2(ops::relu(ops::batch_norm(ops::conv2d(x, k, b), make_leaf(Tensor({4}, 1.0), true),
                                                       make_leaf(Tensor({4}, 0.0), true), ops::Mode::Train, st)));
    auto loss = ops::weighted_sum(y, random_uniform(y->value.shape(), -1, 1, rng));
    backward(loss);
    std::vector<double> out(std::as_const(k->value).grad().begin(), std::as_const(k->value).grad().end());
    out.push_back(loss->value[0]);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Checkpoint c;
  c.metadata = {{"netspec", "x y"}, {"role", "pixel"}};
  Rng rng(5);
  c.tensors.emplace_back("a.weight", random_uniform({2, 3, 1, 1}, -1, 1, rng));
  c.tensors.emplace_back("a.bias", Tensor({2}, 0.25));
  AdamState st;
  st.t = 3;
  st.m = {Tensor({2, 3, 1, 1}, 0.1)};
  st.v = {Tensor({2, 3, 1, 1}, 0.2)};
  c.optimizer = st;
  c.optimizer_names = {"a.weight"};
  auto bytes = encode_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "MSCC1");
  auto d = decode_checkpoint(bytes);
  EXPECT_EQ(d.metadata, c.metadata);
  ASSERT_EQ(d.tensors.size(), 2u);
  EXPECT_EQ(d.tensors[0].second.shape(), (Shape{2, 3, 1, 1}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(d.tensors[0].second[i], c.tensors[0].second[i]);
  ASSERT_TRUE(d.optimizer.has_value());
  EXPECT_EQ(d.optimizer->t, 3u);
  EXPECT_EQ(encode_checkpoint(d), bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);

  const auto path = std::filesystem::temp_directory_path() / "mscc_ckpt_test.bin";
  write_checkpoint(path, c);
  EXPECT_EQ(encode_checkpoint(read_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}
