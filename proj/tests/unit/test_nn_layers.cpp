#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace mmgenre;
using namespace mmgenre::nn;
using mmgenre::testing::project;
using mmgenre::testing::random_mask;
using mmgenre::testing::random_tensor;
using mmgenre::testing::run_backward;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat rows_of(const Tensor<double>& t, std::size_t b) {
  const std::size_t T = t.dim(1), D = t.dim(2);
  Mat m(T, std::vector<double>(D));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < D; ++j) m[i][j] = t[(b * T + i) * D + j];
  return m;
}

Mat affine(const Mat& x, const Tensor<double>& W, const Tensor<double>* bias) {
  Mat y(x.size(), std::vector<double>(W.dim(1), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < W.dim(1); ++o) {
      double s = bias ? (*bias)[o] : 0.0;
      for (std::size_t k = 0; k < W.dim(0); ++k) s += x[i][k] * W.at(k, o);
      y[i][o] = s;
    }
  return y;
}

/// Dense multi-head attention written from the textbook definition.
Mat reference_mhsa(const Mat& x, const std::vector<bool>& valid, const nn::MultiHeadSelfAttention<double>& a) {
  const std::size_t T = x.size(), D = x[0].size(), H = a.heads, dh = D / H;
  const Mat q = affine(x, a.query.weight.value(), &a.query.bias.value());
  const Mat k = affine(x, a.key.weight.value(), nullptr);
  const Mat v = affine(x, a.value.weight.value(), &a.value.bias.value());
  Mat ctx(T, std::vector<double>(D, 0.0));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> w(T, 0.0);
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        if (!valid[j]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        w[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        z += w[j];
      }
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t c = 0; c < dh; ++c) ctx[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
    }
  return affine(ctx, a.out.weight.value(), &a.out.bias.value());
}

struct AttentionFixture {
  ParameterStore<double> store;
  nn::MultiHeadSelfAttention<double> attn;
  AttentionFixture(std::size_t dim, std::size_t heads, std::uint64_t seed) {
    SeededRng rng(seed);
    attn = nn::MultiHeadSelfAttention<double>::create(store, "attn", dim, heads, rng);
  }
};

}  // namespace

// ---- linear ----------------------------------------------------------------

TEST(Linear, IdentityWeightsAndZeroBias) {
  auto x = Var<double>(Tensor<double>::from_rows({{1, -2, 3}}));
  auto W = Var<double>(Tensor<double>::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  auto b = Var<double>(Tensor<double>({3}, 0.0));
  EXPECT_EQ(ops::linear(x, W, b).value(), x.value());
}

TEST(Linear, HandExample) {
  auto y = ops::linear(Var<double>(Tensor<double>::from_rows({{1, 1}})),
                       Var<double>(Tensor<double>::from_rows({{1}, {1}})),
                       Var<double>(Tensor<double>::vector({0.5})));
  EXPECT_EQ(y.value().item(), 2.5);
}

TEST(Linear, PreservesBatchDimensions) {
  SeededRng rng(1);
  ParameterStore<float> store;
  auto l = nn::Linear<float>::create(store, "l", 6, 4, rng);
  auto y = l(Var<float>(random_tensor<float>({2, 5, 6}, rng)));
  EXPECT_EQ(y.shape(), (Shape{2, 5, 4}));
  EXPECT_THROW(l(Var<float>(Tensor<float>({2, 5, 5}))), ShapeError);
}

TEST(Linear, UnbiasedVariantMatchesZeroBias) {
  SeededRng rng(2);
  ParameterStore<double> store;
  auto l = nn::Linear<double>::create(store, "l", 3, 2, rng, false);
  EXPECT_FALSE(store.contains("l.bias"));
  auto x = Var<double>(random_tensor({4, 3}, rng));
  auto ref = ops::linear(x, l.weight, Var<double>(Tensor<double>({2}, 0.0)));
  EXPECT_EQ(l(x).value(), ref.value());
}

// ---- attention -------------------------------------------------------------

TEST(Attention, RejectsIndivisibleHeads) {
  ParameterStore<double> store;
  SeededRng rng(0);
  EXPECT_THROW(nn::MultiHeadSelfAttention<double>::create(store, "a", 10, 3, rng), ConfigError);
  EXPECT_THROW(ops::attention(Var<double>(Tensor<double>({1, 2, 6})), Var<double>(Tensor<double>({1, 2, 6})),
                              Var<double>(Tensor<double>({1, 2, 6})), {}, 4),
               ShapeError);
}

TEST(Attention, SinglePositionIsLinearInThatPosition) {
  AttentionFixture f(8, 2, 3);
  SeededRng rng(4);
  auto x = random_tensor({1, 1, 8}, rng);
  auto y = f.attn(Var<double>(x), {});
  // attention weight 1 ⇒ out(value(x))
  auto expected = f.attn.out(f.attn.value(Var<double>(x)));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y.value()[i], expected.value()[i], 1e-12);
}

TEST(Attention, SingleValidKeyForcesAllWeight) {
  SeededRng rng(5);
  auto q = random_tensor({1, 4, 8}, rng), k = random_tensor({1, 4, 8}, rng);
  const ops::Mask mask = {0, 0, 1, 0};
  auto p = ops::attention_probabilities(q, k, mask, 2);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(p[((h * 4) + i) * 4 + j], j == 2 ? 1.0 : 0.0);
}

TEST(Attention, MatchesDenseReference) {
  AttentionFixture f(4, 2, 2024);
  SeededRng rng(7);
  auto x = random_tensor({1, 3, 4}, rng);
  auto y = f.attn(Var<double>(x), {}).value();
  auto ref = reference_mhsa(rows_of(x, 0), {true, true, true}, f.attn);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[i * 4 + j], ref[i][j], 1e-6);
}

TEST(Attention, MatchesDenseReferenceWithMasks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AttentionFixture f(8, 2, seed);
    SeededRng rng(seed + 100);
    const std::size_t B = 3, T = 5;
    auto x = random_tensor({B, T, 8}, rng);
    auto mask = random_mask(B, T, rng);
    auto y = f.attn(Var<double>(x), mask).value();
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<bool> valid(T);
      for (std::size_t t = 0; t < T; ++t) valid[t] = mask[b * T + t] != 0;
      auto ref = reference_mhsa(rows_of(x, b), valid, f.attn);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < 8; ++j) ASSERT_NEAR(y[(b * T + t) * 8 + j], ref[t][j], 1e-9);
    }
  }
}

TEST(Attention, WeightsSumToOneAndPadsGetZero) {
  SeededRng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng.below(3), T = 1 + rng.below(7);
    auto q = random_tensor<float>({B, T, 8}, rng, 3.0), k = random_tensor<float>({B, T, 8}, rng, 3.0);
    auto mask = random_mask(B, T, rng);
    auto p = ops::attention_probabilities(q, k, mask, 2);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < T; ++j) {
            const float w = p[(((b * 2 + h) * T) + i) * T + j];
            if (!mask[b * T + j]) {
              ASSERT_EQ(w, 0.0f);
            }
            s += w;
          }
          ASSERT_NEAR(s, 1.0, 1e-6);
        }
  }
}

TEST(Attention, PadContentNeverChangesValidOutputs) {
  AttentionFixture f(8, 2, 9);
  SeededRng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t B = 2, T = 6;
    auto x = random_tensor({B, T, 8}, rng);
    auto mask = random_mask(B, T, rng);
    auto x2 = x;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        if (!mask[b * T + t])
          for (std::size_t j = 0; j < 8; ++j) x2[(b * T + t) * 8 + j] = rng.normal(0.0, 50.0);
    auto y1 = f.attn(Var<double>(x), mask).value(), y2 = f.attn(Var<double>(x2), mask).value();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        if (mask[b * T + t]) {
          for (std::size_t j = 0; j < 8; ++j) ASSERT_EQ(y1[(b * T + t) * 8 + j], y2[(b * T + t) * 8 + j]);
        }
  }
}

TEST(Attention, PadKeysAndValuesGetExactlyZeroGradient) {
  SeededRng rng(11);
  auto q = mmgenre::testing::random_var({1, 4, 8}, rng), k = mmgenre::testing::random_var({1, 4, 8}, rng),
       v = mmgenre::testing::random_var({1, 4, 8}, rng);
  const ops::Mask mask = {1, 0, 1, 0};
  auto r = random_tensor({1, 4, 8}, rng);
  run_backward<double>([&] { return project(ops::attention(q, k, v, mask, 2), r); });
  for (std::size_t t : {1u, 3u})
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(k.grad()[t * 8 + j], 0.0);
      EXPECT_EQ(v.grad()[t * 8 + j], 0.0);
    }
}

// ---- encoder ---------------------------------------------------------------

TEST(Encoder, DegenerateSublayersLeaveNormalizedResidual) {
  ParameterStore<double> store;
  SeededRng rng(12);
  auto layer = nn::EncoderLayer<double>::create(store, "enc", 8, 2, 0.0, rng);
  for (auto* p : {&layer.attention.out.weight, &layer.attention.out.bias, &layer.ff2.weight, &layer.ff2.bias})
    p->mutable_value().fill(0.0);
  auto x = Var<double>(random_tensor({2, 4, 8}, rng));
  auto y = layer(x, {}, nn::ForwardMode::eval()).value();
  auto expected = layer.norm2(layer.norm1(x)).value();
  EXPECT_EQ(y, expected);
  auto zero = layer(Var<double>(Tensor<double>({1, 3, 8}, 0.0)), {}, nn::ForwardMode::eval()).value();
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, EvalModeIsDeterministic) {
  ParameterStore<float> store;
  SeededRng rng(13);
  auto enc = nn::Encoder<float>::create(store, "enc", 2, 16, 4, 0.5, rng);
  auto x = Var<float>(random_tensor<float>({3, 7, 16}, rng));
  auto mask = random_mask(3, 7, rng);
  EXPECT_EQ(enc(x, mask, nn::ForwardMode::eval()).value(), enc(x, mask, nn::ForwardMode::eval()).value());
}

TEST(Encoder, TrainModeDropoutDependsOnStream) {
  ParameterStore<float> store;
  SeededRng rng(14);
  auto enc = nn::Encoder<float>::create(store, "enc", 1, 8, 2, 0.5, rng);
  auto x = Var<float>(random_tensor<float>({1, 4, 8}, rng));
  SeededRng a(1), b(1), c(2);
  auto ya = enc(x, {}, nn::ForwardMode::training(a)).value();
  auto yb = enc(x, {}, nn::ForwardMode::training(b)).value();
  auto yc = enc(x, {}, nn::ForwardMode::training(c)).value();
  EXPECT_EQ(ya, yb);
  EXPECT_NE(ya, yc);
}

TEST(Encoder, FeedForwardWidthIsFourTimesModelDim) {
  ParameterStore<float> store;
  SeededRng rng(15);
  auto layer = nn::EncoderLayer<float>::create(store, "enc", 12, 3, 0.0, rng);
  EXPECT_EQ(layer.ff1.weight.shape(), (Shape{12, 48}));
  EXPECT_EQ(layer.ff2.weight.shape(), (Shape{48, 12}));
  // 3 biased D×D projections, one unbiased, two norms, FFN
  const std::size_t D = 12;
  EXPECT_EQ(store.total_parameter_count(), 3 * (D * D + D) + D * D + 4 * D + (D * 4 * D + 4 * D) + (4 * D * D + D));
}

class EncoderGradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(EncoderGradCheck, OneLayerTwoHeadsDim8Len4) {
  ParameterStore<double> store;
  SeededRng rng(GetParam());
  auto layer = nn::EncoderLayer<double>::create(store, "enc", 8, 2, 0.0, rng);
  auto x = mmgenre::testing::random_var({2, 4, 8}, rng);
  auto mask = random_mask(2, 4, rng);
  auto r = random_tensor({2, 4, 8}, rng);
  std::vector<Var<double>> params = {x};
  for (auto& e : store.entries()) params.push_back(e.param);
  const auto res = grad_check_detailed([&] { return project(layer(x, mask, nn::ForwardMode::eval()), r); }, params);
  EXPECT_LT(res.max_relative_error, 1e-4) << "param " << res.worst_param << "[" << res.worst_index
                                          << "] analytic " << res.analytic << " numeric " << res.numeric;
}

INSTANTIATE_TEST_SUITE_P(Seeds, EncoderGradCheck, ::testing::Range<std::uint64_t>(0, 20));

TEST(PositionalTable, AddsRowsAndRejectsOverlongSequences) {
  ParameterStore<double> store;
  SeededRng rng(16);
  auto pos = nn::PositionalTable<double>::create(store, "pos", 5, 3, rng);
  auto x = Var<double>(Tensor<double>({2, 4, 3}, 1.0));
  auto y = pos(x).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[(b * 4 + t) * 3 + j], 1.0 + pos.table.value().at(t, j));
  EXPECT_THROW(pos(Var<double>(Tensor<double>({1, 6, 3}))), ShapeError);
}

// ---- dropout ---------------------------------------------------------------

TEST(Dropout, ZeroRateAndEvalAreIdentity) {
  SeededRng rng(17);
  auto x = Var<float>(random_tensor<float>({100}, rng));
  EXPECT_EQ(nn::dropout(x, 0.0, nn::ForwardMode::training(rng)).value(), x.value());
  EXPECT_EQ(nn::dropout(x, 0.0, nn::ForwardMode::eval()).value(), x.value());
  EXPECT_EQ(nn::dropout(x, 0.5, nn::ForwardMode::eval()).value(), x.value());
}

TEST(Dropout, RejectsInvalidRates) {
  auto x = Var<float>(Tensor<float>({4}, 1.f));
  SeededRng rng(0);
  EXPECT_THROW(nn::dropout(x, 1.0, nn::ForwardMode::training(rng)), std::invalid_argument);
  EXPECT_THROW(nn::dropout(x, -0.1, nn::ForwardMode::eval()), std::invalid_argument);
}

TEST(Dropout, SurvivorFractionAndMean) {
  SeededRng rng(18);
  const std::size_t n = 100000;
  auto x = Var<double>(Tensor<double>({n}, 1.0));
  auto y = nn::dropout(x, 0.5, nn::ForwardMode::training(rng)).value();
  std::size_t survivors = 0;
  double sum = 0;
  for (double v : y.data()) {
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    survivors += v != 0.0;
    sum += v;
  }
  EXPECT_NEAR(static_cast<double>(survivors) / n, 0.5, 0.01);
  EXPECT_NEAR(sum / n, 1.0, 0.02);
}

// ---- parameter store -------------------------------------------------------

TEST(ParameterStore, UniqueNamesAndCounts) {
  ParameterStore<float> store;
  store.add("b", Tensor<float>({2, 3}));
  store.add("a", Tensor<float>({4}));
  EXPECT_THROW(store.add("a", Tensor<float>({1})), std::invalid_argument);
  EXPECT_EQ(store.total_parameter_count(), 10u);
  EXPECT_EQ(store.entries()[0].name, "b");
  EXPECT_EQ(store.entries()[1].name, "a");
  EXPECT_TRUE(store.get("a").requires_grad());
}

// ---- Adam ------------------------------------------------------------------

TEST(Adam, FirstStepClosedForm) {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>::scalar(0.0));
  std::vector<Tensor<double>> g = {Tensor<double>::scalar(1.0)};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  adam_step(store, std::span<const Tensor<double>>(g), cfg);
  // m̂ = g, v̂ = g², so Δp = −lr·g/(|g| + eps)
  EXPECT_NEAR(p.value().item(), -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value().item(), -9.99989e-4, 2e-8);
  EXPECT_EQ(store.entries()[0].step, 1u);
}

TEST(Adam, MatchesReferenceOverSeveralSteps) {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>::vector({0.5, -1.0}));
  const AdamConfig cfg{0.01, 0.8, 0.95, 1e-6};
  double ref[2] = {0.5, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  SeededRng rng(19);
  for (int t = 1; t <= 5; ++t) {
    std::vector<Tensor<double>> g = {Tensor<double>::vector({rng.normal(), rng.normal()})};
    for (int i = 0; i < 2; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[0][i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[0][i] * g[0][i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t)), vh = v[i] / (1 - std::pow(cfg.beta2, t));
      ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    adam_step(store, std::span<const Tensor<double>>(g), cfg);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(p.value()[i], ref[i], 1e-14);
  }
}

TEST(Adam, ZeroGradientAndZeroLearningRateLeaveParameters) {
  ParameterStore<float> store;
  auto p = store.add("p", Tensor<float>::vector({1.f, 2.f}));
  const auto before = p.value();
  std::vector<Tensor<float>> zero = {Tensor<float>({2}, 0.f)};
  adam_step(store, std::span<const Tensor<float>>(zero), AdamConfig{1e-3});
  EXPECT_EQ(p.value(), before);
  SeededRng rng(20);
  for (int i = 0; i < 10; ++i) {
    std::vector<Tensor<float>> g = {random_tensor<float>({2}, rng)};
    adam_step(store, std::span<const Tensor<float>>(g), AdamConfig{0.0});
  }
  EXPECT_EQ(p.value(), before);
}

TEST(Adam, IdenticalRunsIdenticalParameters) {
  auto run = [] {
    ParameterStore<float> store;
    SeededRng rng(21);
    auto p = store.add("p", random_tensor<float>({5}, rng));
    for (int i = 0; i < 20; ++i) {
      std::vector<Tensor<float>> g = {random_tensor<float>({5}, rng)};
      adam_step(store, std::span<const Tensor<float>>(g), AdamConfig{1e-2});
    }
    return p.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsMissingOrMisshapedGradients) {
  ParameterStore<float> store;
  store.add("a", Tensor<float>({2}));
  store.add("b", Tensor<float>({3}));
  std::vector<Tensor<float>> one = {Tensor<float>({2})};
  EXPECT_THROW(adam_step(store, std::span<const Tensor<float>>(one), AdamConfig{}), std::invalid_argument);
  std::vector<Tensor<float>> bad = {Tensor<float>({2}), Tensor<float>({4})};
  EXPECT_THROW(adam_step(store, std::span<const Tensor<float>>(bad), AdamConfig{}), std::invalid_argument);
}

// ---- clipping --------------------------------------------------------------

TEST(Clip, BelowThresholdUnchanged) {
  std::vector<Tensor<double>> g = {Tensor<double>::vector({0.3, 0.4})};
  EXPECT_NEAR(clip_global_norm(std::span<Tensor<double>>(g), 1.0), 0.5, 1e-15);
  EXPECT_EQ(g[0], Tensor<double>::vector({0.3, 0.4}));
}

TEST(Clip, ThreeFourScalesToUnitNorm) {
  std::vector<Tensor<double>> g = {Tensor<double>::vector({3, 4})};
  EXPECT_EQ(clip_global_norm(std::span<Tensor<double>>(g), 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[0][1], 0.8, 1e-15);
}

TEST(Clip, RejectsNonPositiveMax) {
  std::vector<Tensor<double>> g = {Tensor<double>::vector({3, 4})};
  EXPECT_THROW(clip_global_norm(std::span<Tensor<double>>(g), 0.0), std::invalid_argument);
}

TEST(Clip, NormBoundAndDirectionProperty) {
  SeededRng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor<float>> g;
    const std::size_t parts = 1 + rng.below(4);
    for (std::size_t i = 0; i < parts; ++i) g.push_back(random_tensor<float>({1 + rng.below(6)}, rng, rng.uniform(0.01, 10)));
    const auto before = g;
    const double max_norm = rng.uniform(0.1, 5.0);
    clip_global_norm(std::span<Tensor<float>>(g), max_norm);
    const double after = global_norm(std::span<const Tensor<float>>(g));
    ASSERT_LE(after, max_norm + 1e-6);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < parts; ++i)
      for (std::size_t j = 0; j < g[i].size(); ++j) {
        dot += double(g[i][j]) * before[i][j];
        na += double(g[i][j]) * g[i][j];
        nb += double(before[i][j]) * before[i][j];
      }
    ASSERT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-6);
  }
}
