#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "crynet/nn/ops.hpp"
#include "gradcheck.hpp"

namespace {

using namespace crynet;
using namespace crynet::nn;
using crynet::test_support::gradcheck;
using crynet::test_support::random_array;
using Vars = std::vector<Var<double>>;

constexpr double kTol = 1e-4;

TEST(NnArray, RejectsZeroDimensionsAndBadLength) {
  EXPECT_THROW(Array<double>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Array<double>(Shape{2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(NnOps, MatmulIdentityAndGradient) {
  Graph<double> g;
  Array<double> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  auto I = g.constant(eye);
  auto x = g.variable(Array<double>(Shape{3, 2}, {1, 2, 3, 4, 5, 6}));
  auto y = matmul(I, x);
  EXPECT_EQ(y.value(), x.value());
  Array<double> seed(Shape{3, 2}, {.1, .2, .3, .4, .5, .6});
  g.backward(y, seed);
  EXPECT_EQ(x.grad(), seed);
}

TEST(NnOps, FanInAccumulates) {
  Graph<double> g;
  auto a = g.variable(Array<double>(Shape{2}, {1.5, -2.0}));
  auto s = sum(add(a, a));
  g.backward(s);
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 2.0);
}

TEST(NnOps, SliceConcatRoundTrip) {
  std::mt19937_64 rng(1);
  Graph<double> g;
  auto x = g.variable(random_array({2, 5, 3}, rng));
  auto y = concat<double>({slice(x, 1, 0, 2), slice(x, 1, 2, 5)}, 1);
  EXPECT_EQ(y.value(), x.value());
  auto seed = random_array({2, 5, 3}, rng);
  g.backward(y, seed);
  EXPECT_EQ(x.grad(), seed);
}

TEST(NnOps, ShapeMismatchThrows) {
  Graph<double> g;
  auto a = g.constant(Array<double>(Shape{2, 3}));
  auto b = g.constant(Array<double>(Shape{3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(concat<double>({a, b}, 0), ShapeError);
}

TEST(NnOps, SigmoidValues) {
  EXPECT_DOUBLE_EQ(stable_sigmoid(0.0), 0.5);
  EXPECT_GT(stable_sigmoid(-50.0), 0.0);
  EXPECT_TRUE(std::isfinite(stable_sigmoid(-500.0)));
  EXPECT_DOUBLE_EQ(stable_sigmoid(500.0), 1.0);
  Graph<double> g;
  auto x = g.variable(Array<double>::scalar(0.0));
  g.backward(sum(sigmoid(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(NnOps, TanhValues) {
  Graph<double> g;
  auto x = g.variable(Array<double>(Shape{3}, {0.0, 0.7, -0.7}));
  auto y = tanh(x);
  EXPECT_DOUBLE_EQ(y.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -y.value()[2]);
  g.backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(NnOps, NonFiniteTripsNumericalError) {
  Graph<double> g;
  auto x = g.constant(Array<double>::scalar(1e200));
  EXPECT_THROW(mul(x, x), NumericalError);
  EXPECT_THROW(g.constant(Array<double>::scalar(std::nan(""))), NumericalError);
}

TEST(NnGradcheck, ElementwiseAndShapeOps) {
  std::mt19937_64 rng(7);
  auto a = random_array({3, 4}, rng, -2, 2);
  auto b = random_array({3, 4}, rng, -2, 2);
  auto bias = random_array({4}, rng, -2, 2);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return mul(sub(v[0], v[1]), add(v[0], v[1])); }, {a, b}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return add_bias(v[0], v[1]); }, {a, bias}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return sigmoid(scale(v[0], 1.7)); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return tanh(v[0]); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return relu(v[0]); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return mean(mul(v[0], v[0])); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return reshape(slice(v[0], 1, 1, 3), {2, 3}); }, {a}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return concat<double>({v[0], v[1]}, 0); }, {a, b}), kTol);
}

TEST(NnGradcheck, MatmulAllTransposes) {
  std::mt19937_64 rng(8);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      auto a = random_array(ta ? Shape{4, 3} : Shape{3, 4}, rng, -2, 2);
      auto b = random_array(tb ? Shape{5, 4} : Shape{4, 5}, rng, -2, 2);
      const double err =
          gradcheck([ta, tb](auto&, const Vars& v) { return matmul(v[0], v[1], ta == 1, tb == 1); }, {a, b});
      EXPECT_LT(err, kTol) << "ta=" << ta << " tb=" << tb;
    }
  }
}

TEST(NnConv, OneByOneIdentityAndBoxSum) {
  Graph<double> g;
  std::mt19937_64 rng(3);
  auto x = g.constant(random_array({1, 1, 5, 6}, rng));
  auto k1 = g.constant(Array<double>(Shape{1, 1, 1, 1}, 1.0));
  EXPECT_EQ(conv2d(x, k1).value(), x.value());

  auto c = g.constant(Array<double>(Shape{1, 1, 5, 5}, 0.3));
  auto k3 = g.constant(Array<double>(Shape{1, 1, 3, 3}, 1.0));
  auto y = conv2d(c, k3);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(y.value()[i * 5 + j], 2.7, 1e-12);
  EXPECT_NEAR(y.value()[0], 4 * 0.3, 1e-12);  // corner sees a 2x2 window
}

TEST(NnConv, StrideGivesCeilOutput) {
  Graph<double> g;
  auto x = g.constant(Array<double>(Shape{2, 3, 7, 9}, 1.0));
  auto k = g.constant(Array<double>(Shape{4, 3, 3, 3}, 1.0));
  EXPECT_EQ(conv2d(x, k, {2, 2}).shape(), (Shape{2, 4, 4, 5}));
  auto bad = g.constant(Array<double>(Shape{4, 2, 3, 3}, 1.0));
  EXPECT_THROW(conv2d(x, bad), ShapeError);
}

TEST(NnGradcheck, Conv2d) {
  std::mt19937_64 rng(11);
  auto x = random_array({2, 3, 6, 5}, rng, -2, 2);
  auto k = random_array({4, 3, 3, 3}, rng, -2, 2);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return conv2d(v[0], v[1]); }, {x, k}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return conv2d(v[0], v[1], {2, 1}); }, {x, k}), kTol);
  auto k2 = random_array({2, 3, 2, 4}, rng, -2, 2);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return conv2d(v[0], v[1], {2, 2}); }, {x, k2}), kTol);
}

// Direct-loop reference for same-padded conv: y = conv(x, k); also returns the
// adjoint gradients for an upstream seed G.
struct DirectConv {
  std::vector<double> y, dx, dk;
};

DirectConv direct_conv(const Array<double>& x, const Array<double>& k, const Array<double>& seed, std::size_t sh,
                       std::size_t sw) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const std::size_t HO = (H + sh - 1) / sh, WO = (W + sw - 1) / sw;
  const auto pt = static_cast<std::ptrdiff_t>(std::max<std::ptrdiff_t>(0, (HO - 1) * sh + KH - H) / 2);
  const auto pl = static_cast<std::ptrdiff_t>(std::max<std::ptrdiff_t>(0, (WO - 1) * sw + KW - W) / 2);
  DirectConv r{std::vector<double>(B * O * HO * WO), std::vector<double>(x.size()), std::vector<double>(k.size())};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < HO; ++oy)
        for (std::size_t ox = 0; ox < WO; ++ox) {
          const std::size_t yi = ((b * O + o) * HO + oy) * WO + ox;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < KH; ++i)
              for (std::size_t j = 0; j < KW; ++j) {
                const auto yy = static_cast<std::ptrdiff_t>(oy * sh + i) - pt;
                const auto xx = static_cast<std::ptrdiff_t>(ox * sw + j) - pl;
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W))
                  continue;
                const std::size_t xi = ((b * C + c) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx);
                const std::size_t ki = ((o * C + c) * KH + i) * KW + j;
                r.y[yi] += x[xi] * k[ki];
                r.dx[xi] += seed[yi] * k[ki];
                r.dk[ki] += seed[yi] * x[xi];
              }
        }
  return r;
}

TEST(NnConv, MatchesDirectLoopAcrossTiles) {
  std::mt19937_64 rng(21);
  // 45 x 61 = 2745 output positions, more than one im2col tile.
  for (auto [sh, sw] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}}) {
    const auto x = random_array({2, 3, 45 * sh, 61 * sw}, rng);
    const auto k = random_array({4, 3, 3, 3}, rng);
    Graph<double> g;
    auto xv = g.variable(x);
    auto kv = g.variable(k);
    auto y = conv2d(xv, kv, {sh, sw});
    const auto seed = random_array(y.shape(), rng);
    g.backward(y, seed);
    const auto ref = direct_conv(x, k, seed, sh, sw);
    ASSERT_EQ(y.value().size(), ref.y.size());
    for (std::size_t i = 0; i < ref.y.size(); ++i) ASSERT_NEAR(y.value()[i], ref.y[i], 1e-10) << i;
    for (std::size_t i = 0; i < ref.dx.size(); ++i) ASSERT_NEAR(xv.grad()[i], ref.dx[i], 1e-10) << i;
    for (std::size_t i = 0; i < ref.dk.size(); ++i) ASSERT_NEAR(kv.grad()[i], ref.dk[i], 1e-8) << i;
  }
}

TEST(NnBatchNorm, TrainNormalisesAndUpdatesRunningStats) {
  std::mt19937_64 rng(5);
  Graph<double> g;
  auto x = g.constant(random_array({4, 2, 3, 3}, rng, -2, 3));
  auto gamma = g.constant(Array<double>(Shape{2}, 1.0));
  auto beta = g.constant(Array<double>(Shape{2}, 0.0));
  Array<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
  auto y = batchnorm(x, gamma, beta, rm, rv, Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t k = 0; k < 9; ++k) {
        const double v = y.value()[(b * 2 + c) * 9 + k];
        s += v;
        ss += v * v;
      }
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(ss / 36, 1.0, 1e-3);
  }
  EXPECT_NE(rm[0], 0.0);

  Graph<double> one;
  auto single = one.constant(Array<double>(Shape{1, 2, 3, 3}, 1.0));
  auto g1 = one.constant(Array<double>(Shape{2}, 1.0));
  auto b1 = one.constant(Array<double>(Shape{2}, 0.0));
  EXPECT_THROW(batchnorm(single, g1, b1, rm, rv, Mode::Train), ConfigError);
}

TEST(NnBatchNorm, EvalIsAffine) {
  Graph<double> g;
  auto x = g.constant(Array<double>(Shape{1, 2}, {1.0, -1.0}));
  auto gamma = g.constant(Array<double>(Shape{2}, {2.0, 0.5}));
  auto beta = g.constant(Array<double>(Shape{2}, {0.1, 0.2}));
  Array<double> rm(Shape{2}, {0.5, -0.5}), rv(Shape{2}, {4.0, 0.25});
  auto y = batchnorm(x, gamma, beta, rm, rv, Mode::Eval);
  EXPECT_NEAR(y.value()[0], (1.0 - 0.5) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.1, 1e-12);
  EXPECT_NEAR(y.value()[1], (-1.0 + 0.5) / std::sqrt(0.25 + 1e-5) * 0.5 + 0.2, 1e-12);
}

TEST(NnGradcheck, BatchNormBothModes) {
  std::mt19937_64 rng(12);
  auto x = random_array({3, 2, 2, 3}, rng, -2, 2);
  auto gamma = random_array({2}, rng, 0.5, 2);
  auto beta = random_array({2}, rng, -1, 1);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const double err = gradcheck(
        [mode](auto&, const Vars& v) {
          Array<double> rm(Shape{2}, 0.1), rv(Shape{2}, 0.8);
          return batchnorm(v[0], v[1], v[2], rm, rv, mode);
        },
        {x, gamma, beta});
    EXPECT_LT(err, kTol);
  }
}

TEST(NnPool, ValuesAndOneHotGradient) {
  Graph<double> g;
  auto c = g.constant(Array<double>(Shape{1, 1, 4, 4}, 0.7));
  auto pc = maxpool2d(c, 2, 2);
  for (double v : pc.value().values()) EXPECT_EQ(v, 0.7);

  auto x = g.variable(Array<double>(Shape{1, 1, 2, 3}, {1, 5, 2, 5, 0, 3}));
  auto p = maxpool2d(x, 2, 3);
  EXPECT_EQ(p.value()[0], 5.0);
  g.backward(sum(p));
  // first of the tied maxima gets everything
  EXPECT_EQ(x.grad().storage(), (std::vector<double>{0, 1, 0, 0, 0, 0}));
}

TEST(NnPool, CeilModeAndGradcheck) {
  std::mt19937_64 rng(13);
  Graph<double> g;
  auto x = g.constant(random_array({1, 2, 5, 3}, rng));
  EXPECT_EQ(maxpool2d(x, 2, 1).shape(), (Shape{1, 2, 3, 3}));
  auto xr = random_array({2, 2, 5, 4}, rng, -2, 2);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return maxpool2d(v[0], 2, 1); }, {xr}), kTol);
}

TEST(NnLoss, UniformLogitsGiveLogC) {
  Graph<double> g;
  auto z = g.constant(Array<double>(Shape{2, 5}, 0.3));
  std::vector<int> y{1, 4};
  EXPECT_NEAR(softmax_cross_entropy<double>(z, y).value()[0], std::log(5.0), 1e-12);
  std::vector<int> bad{1, 5};
  EXPECT_THROW(softmax_cross_entropy<double>(z, bad), LabelError);
}

TEST(NnLoss, ShiftInvariance) {
  std::mt19937_64 rng(14);
  auto z = random_array({3, 4}, rng, -2, 2);
  auto zs = z;
  for (auto& v : zs.storage()) v += 17.0;
  std::vector<int> y{0, 3, 2};
  Graph<double> g1, g2;
  auto a = g1.variable(z);
  auto b = g2.variable(zs);
  auto la = softmax_cross_entropy<double>(a, y);
  auto lb = softmax_cross_entropy<double>(b, y);
  EXPECT_NEAR(la.value()[0], lb.value()[0], 1e-12);
  g1.backward(la);
  g2.backward(lb);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a.grad()[i], b.grad()[i], 1e-12);
}

TEST(NnGradcheck, CrossEntropyPlainAndWeighted) {
  std::mt19937_64 rng(15);
  auto z = random_array({4, 3}, rng, -2, 2);
  std::vector<int> y{0, 2, 1, 2};
  std::vector<double> w{0.5, 2.0, 1.25};
  EXPECT_LT(gradcheck([&](auto&, const Vars& v) { return softmax_cross_entropy<double>(v[0], y); }, {z}), kTol);
  EXPECT_LT(gradcheck([&](auto&, const Vars& v) { return softmax_cross_entropy<double>(v[0], y, w); }, {z}), kTol);
}

TEST(NnDropout, IdentityCasesAndMeanPreservation) {
  std::mt19937_64 rng(0);
  Graph<double> g;
  auto x = g.constant(Array<double>(Shape{10}, 2.0));
  EXPECT_EQ(dropout(x, 0.0, rng, Mode::Train).value(), x.value());
  EXPECT_EQ(dropout(x, 0.5, rng, Mode::Eval).value(), x.value());
  EXPECT_THROW(dropout(x, 1.0, rng, Mode::Train), ConfigError);

  // Monte-Carlo: the average over many seeds of the mean output matches the input mean.
  double total = 0;
  constexpr int kSeeds = 200;
  for (int s = 0; s < kSeeds; ++s) {
    std::mt19937_64 r(static_cast<std::uint64_t>(s));
    Graph<double> gg;
    auto ones = gg.constant(Array<double>(Shape{1000}, 1.0));
    total += mean(dropout(ones, 0.3, r, Mode::Train)).value()[0];
  }
  EXPECT_NEAR(total / kSeeds, 1.0, 0.01);

  std::mt19937_64 r1(42), r2(42);
  Graph<double> g1, g2;
  auto y1 = dropout(g1.constant(Array<double>(Shape{50}, 1.0)), 0.4, r1, Mode::Train);
  auto y2 = dropout(g2.constant(Array<double>(Shape{50}, 1.0)), 0.4, r2, Mode::Train);
  EXPECT_EQ(y1.value(), y2.value());
}

TEST(NnGradcheck, SequenceHelpers) {
  std::mt19937_64 rng(16);
  auto x4 = random_array({2, 3, 2, 4}, rng, -2, 2);
  auto x3 = random_array({2, 4, 3}, rng, -2, 2);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return to_sequence(v[0]); }, {x4}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return mean_over_time(v[0]); }, {x3}), kTol);
  EXPECT_LT(gradcheck([](auto&, const Vars& v) { return stack_time<double>({time_step(v[0], 3), time_step(v[0], 1)}); },
                      {x3}),
            kTol);
}

TEST(NnOps, ToSequenceLayout) {
  Graph<double> g;
  Array<double> x(Shape{1, 2, 2, 3});
  std::iota(x.storage().begin(), x.storage().end(), 0.0);
  auto s = to_sequence(g.constant(x));
  ASSERT_EQ(s.shape(), (Shape{1, 3, 4}));
  // frame t collects x[c, h, t] with c-major ordering
  EXPECT_EQ(s.value().storage(), (std::vector<double>{0, 3, 6, 9, 1, 4, 7, 10, 2, 5, 8, 11}));
}

TEST(NnParams, DuplicateNamesAndBinding) {
  ParamStore<double> store;
  store.add("w", Array<double>(Shape{2}, 1.0));
  EXPECT_THROW(store.add("w", Array<double>(Shape{2})), ConfigError);
  Graph<double> g;
  auto a = g.parameter(store, "w");
  auto b = g.parameter(store, "w");
  EXPECT_EQ(a.id(), b.id());
  g.backward(sum(mul(a, b)));
  EXPECT_DOUBLE_EQ(store.at("w").grad[0], 2.0);
}

TEST(NnAdam, ZeroGradAndZeroLr) {
  ParamStore<double> store;
  store.add("w", Array<double>(Shape{3}, {1, -2, 3}));
  store.at("w").grad = Array<double>(Shape{3});
  const auto before = store.at("w").value;
  adam_step(store, {});
  EXPECT_EQ(store.at("w").value, before);
  store.at("w").grad = Array<double>(Shape{3}, {0.5, -1, 2});
  AdamConfig frozen;
  frozen.lr = 0;
  adam_step(store, frozen);
  EXPECT_EQ(store.at("w").value, before);
}

TEST(NnAdam, ConstantGradientFollowsSign) {
  // With a constant gradient the bias-corrected moments equal g and g^2
  // exactly, so every step moves by lr * g / (|g| + eps).
  ParamStore<double> store;
  store.add("w", Array<double>(Shape{2}, 0.0));
  const std::vector<double> g{0.3, -4.0};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  double last[2] = {0, 0};
  for (int step = 0; step < 1000; ++step) {
    store.at("w").grad = Array<double>(Shape{2}, g);
    last[0] = store.at("w").value[0];
    last[1] = store.at("w").value[1];
    adam_step(store, cfg);
  }
  for (int i = 0; i < 2; ++i) {
    const double expected = -cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(store.at("w").value[i] - last[i], expected, 1e-9);
    EXPECT_NEAR(store.at("w").value[i], 1000 * expected, 1e-7);
  }
}

TEST(NnParams, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "crynet_params_test";
  std::filesystem::create_directories(dir);
  ParamStore<float> store(123);
  store.add("conv", Array<float>(Shape{2, 1, 1, 2}, {1.5f, -2.f, 0.25f, 8.f}));
  store.add("bn.running_mean", Array<float>(Shape{2}, {0.1f, 0.2f}), false);
  store.save(dir / "m.json", dir / "w.bin");
  auto back = ParamStore<float>::load(dir / "m.json", dir / "w.bin");
  EXPECT_EQ(back.names(), store.names());
  EXPECT_EQ(back.at("conv").value, store.at("conv").value);
  EXPECT_FALSE(back.at("bn.running_mean").trainable);
  EXPECT_EQ(back.seed(), 123u);
  EXPECT_EQ(std::filesystem::file_size(dir / "w.bin"), 6 * sizeof(float));
  std::filesystem::remove_all(dir);
}

TEST(NnGraph, DeterministicGivenSeed) {
  auto run = [] {
    std::mt19937_64 rng(77);
    Graph<double> g;
    auto x = g.variable(random_array({4, 6}, rng));
    auto y = dropout(tanh(x), 0.25, rng, Mode::Train);
    g.backward(sum(y));
    return x.grad();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
