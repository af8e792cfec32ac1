#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "crynet/metrics.hpp"
#include "crynet/model.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"
#include "tiny_corpus.hpp"

namespace {

using namespace crynet;
using crynet::test_support::temp_dir;
using crynet::test_support::tiny_corpus;
using crynet::test_support::tiny_model;
using nn::Array;
using nn::Graph;
using nn::Mode;
using nn::ParamStore;

TEST(ModelConfig, DefaultShapeArithmetic) {
  const ModelConfig m;
  EXPECT_EQ(m.feature_dim(), 1120u);  // 32 * ceil(ceil(ceil(273/2)/2)/2)
  EXPECT_EQ(tiny_model().feature_dim(), 2u);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  ModelConfig m = tiny_model(CellKind::Lstm);
  m.feature_subset = FeatureSet::parse("mfcc,stft");
  const auto back = ModelConfig::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_THROW(ModelConfig::from_json(nlohmann::json{{"filtres", {1, 2}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"lr", 0.1}, {"epochs", 3}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"patience", 0}}), ConfigError);
}

TEST(Encoder, DefaultStemOutputShape) {
  const CryModel<float> model(ModelConfig{}, 3);
  ParamStore<float> store;
  std::mt19937_64 rng(1);
  model.init_params(store, rng);
  Graph<float> g;
  const auto x = g.constant(Array<float>::zeros({1, 1, 273, 233}));
  const auto seq = model.encode(g, store, x, Mode::Eval);
  EXPECT_EQ(seq.shape(), (nn::Shape{1, 233, 1120}));
  // Zero input, zero shifts: the stem is linear up to ReLU, so output is zero.
  for (float v : seq.value().values()) ASSERT_EQ(v, 0.0f);
}

TEST(Encoder, TimeEquivariant) {
  ModelConfig cfg = tiny_model();
  cfg.frames = 24;
  const CryModel<double> model(cfg, 3);
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  model.init_params(store, rng);
  // Zero margins wider than the receptive field keep the zero padding
  // indistinguishable from a circular wrap.
  Array<double> x = Array<double>::zeros({1, 1, 5, 24});
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t h = 0; h < 5; ++h) {
    for (std::size_t w = 8; w < 16; ++w) x.values()[h * 24 + w] = u(rng);
  }
  const std::size_t shift = 3;
  Array<double> xs = Array<double>::zeros(x.shape());
  for (std::size_t h = 0; h < 5; ++h) {
    for (std::size_t w = 0; w < 24; ++w) xs.values()[h * 24 + (w + shift) % 24] = x.values()[h * 24 + w];
  }
  Graph<double> g;
  const auto a = model.encode(g, store, g.constant(x), Mode::Eval).value();
  const auto b = model.encode(g, store, g.constant(xs), Mode::Eval).value();
  const std::size_t F = a.dim(2);
  for (std::size_t t = 0; t < 24; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      EXPECT_NEAR(b.values()[((t + shift) % 24) * F + f], a.values()[t * F + f], 1e-12);
    }
  }
}

TEST(Model, EndToEndGradientCheck) {
  for (auto cell : {CellKind::Lmu, CellKind::Lstm, CellKind::None}) {
    const CryModel<double> model(tiny_model(cell), 3);
    ParamStore<double> store;
    std::mt19937_64 rng(11);
    model.init_params(store, rng);
    const auto x = test_support::random_array({2, 1, 5, 8}, rng);
    const std::vector<int> y{0, 2};
    const double err = test_support::param_gradcheck(store, [&](Graph<double>& g, ParamStore<double>& s) {
      std::mt19937_64 r(0);
      const auto logits = model.forward(g, s, g.constant(x), Mode::Train, r, false);
      return nn::softmax_cross_entropy(logits, std::span<const int>(y));
    });
    EXPECT_LT(err, 1e-3) << to_string(cell);
  }
}

TEST(Model, LogitsAreFiniteAndDeterministicInEval) {
  const CryModel<float> model(tiny_model(), 4);
  ParamStore<float> store;
  std::mt19937_64 rng(3);
  model.init_params(store, rng);
  Array<float> x({2, 1, 5, 8});
  for (std::size_t i = 0; i < 40; ++i) x.values()[i] = static_cast<float>(std::sin(0.3 * static_cast<double>(i % 40)));
  for (std::size_t i = 40; i < 80; ++i) x.values()[i] = x.values()[i - 40];
  Graph<float> g;
  const auto z = model.forward(g, store, g.constant(x), Mode::Eval, rng).value();
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_TRUE(std::isfinite(z.values()[c]));
    EXPECT_EQ(z.values()[c], z.values()[4 + c]);
  }
}

TEST(Model, RecurrentParameterCounts) {
  ModelConfig m;
  EXPECT_EQ(CryModel<float>(m, 3).recurrent_params(), 160u);
  m.cell = CellKind::Lstm;
  EXPECT_EQ(CryModel<float>(m, 3).recurrent_params(), 24832u);
}

TEST(Checkpoint, NormaliseMasksAndChecksChannels) {
  Checkpoint ck;
  ck.model.feature_subset = FeatureSet::parse("mfcc,stft");
  ck.z_mean.assign(273, 1.0);
  ck.z_std.assign(273, 2.0);
  AlignedFeatureTensor t;
  t.data = Eigen::MatrixXd::Constant(273, 233, 5.0);
  const auto n = ck.normalize(t);
  EXPECT_FLOAT_EQ(n(0, 0), 2.0f);
  t.data = Eigen::MatrixXd::Zero(10, 233);
  EXPECT_THROW((void)ck.normalize(t), ConfigError);
}

TrainConfig quick(int epochs = 6) {
  TrainConfig t;
  t.lr = 0.05;
  t.batch_size = 4;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.seed = 3;
  return t;
}

TEST(Train, LearnsTheTinyTask) {
  const auto recs = tiny_corpus(temp_dir("train_tiny"));
  const auto out = train_model(recs, tiny_model(), quick(15));
  EXPECT_GE(out.report.best_val_macro_f1, 0.9);
  EXPECT_LT(out.report.epochs.back().train_loss, out.report.epochs.front().train_loss);
  double max_f1 = 0.0;
  for (const auto& e : out.report.epochs) max_f1 = std::max(max_f1, e.val_macro_f1);
  EXPECT_DOUBLE_EQ(out.checkpoint.best_val_macro_f1, max_f1);
  EXPECT_EQ(out.checkpoint.labels, (std::vector<std::string>{"class0", "class1", "class2"}));
}

TEST(Train, DeterministicGivenSeed) {
  const auto recs = tiny_corpus(temp_dir("train_determinism"));
  const auto a = train_model(recs, tiny_model(), quick(3));
  const auto b = train_model(recs, tiny_model(), quick(3));
  ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    EXPECT_EQ(a.report.epochs[i].train_loss, b.report.epochs[i].train_loss);
    EXPECT_EQ(a.report.epochs[i].val_macro_f1, b.report.epochs[i].val_macro_f1);
  }
  auto pa = a.checkpoint.params.begin();
  for (const auto& p : b.checkpoint.params) {
    EXPECT_EQ(p.value.storage(), pa->value.storage()) << p.name;
    ++pa;
  }
}

TEST(Train, FrozenLearningRateStopsAfterTwoEpochs) {
  const auto recs = tiny_corpus(temp_dir("train_frozen"));
  TrainConfig t = quick(10);
  t.lr = 0.0;
  t.patience = 1;
  const auto out = train_model(recs, tiny_model(), t);
  EXPECT_EQ(out.report.epochs.size(), 2u);
  EXPECT_TRUE(out.report.stopped_early);
}

TEST(Train, RefusesLeakyOrIncompleteData) {
  auto recs = tiny_corpus(temp_dir("train_refuse"));
  auto leaky = recs;
  leaky.front().split = Split::Test;  // g0 now straddles train and test
  EXPECT_THROW(train_model(leaky, tiny_model(), quick(1)), LeakageError);

  auto missing = recs;
  for (auto& r : missing) {
    if (r.label == "class2" && r.split == Split::Train) r.split = Split::Unassigned;
  }
  EXPECT_THROW(train_model(missing, tiny_model(), quick(1)), DataError);
}

TEST(Predict, RowsCheckpointRoundTripAndErrors) {
  const auto dir = temp_dir("predict");
  const auto recs = tiny_corpus(dir / "data");
  const auto out = train_model(recs, tiny_model(), quick(2));
  const auto test = select_split(recs, Split::Test);
  const auto table = predict_logits(test, out.checkpoint);
  EXPECT_EQ(table.rows.size(), test.size());

  const auto single = predict_logits({test[0]}, out.checkpoint);
  ASSERT_EQ(single.rows.size(), 1u);
  const auto twice = predict_logits({test[0], test[0]}, out.checkpoint);
  EXPECT_EQ(twice.rows[0], twice.rows[1]);

  out.checkpoint.save(dir / "ckpt");
  const auto loaded = Checkpoint::load(dir / "ckpt");
  const auto again = predict_logits(test, loaded);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t c = 0; c < table.rows[i].size(); ++c) EXPECT_FLOAT_EQ(again.rows[i][c], table.rows[i][c]);
  }

  auto broken = test[0];
  broken.features = (dir / "nope.cryf").string();
  EXPECT_THROW(predict_logits({broken}, out.checkpoint), IoError);
}

}  // namespace
