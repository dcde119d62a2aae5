#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mcnet/train.hpp"

using namespace mcnet;
namespace fs = std::filesystem;

namespace {

Dataset striped(std::size_t n, std::uint64_t seed, std::size_t classes = 10) {
  SyntheticSpec s;
  s.n_samples = n;
  s.n_classes = classes;
  s.image_size = 8;
  s.noise = 0.3;
  s.seed = seed;
  return make_synthetic(s);
}

TrainConfig small_config(const std::string& model = "mini_resnet") {
  TrainConfig c;
  c.model = model;
  c.batch_size = 20;
  c.eval_batch_size = 50;
  return c;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("mcnet_unit_" + name); }

bool same_epochs(const RunMetrics& a, const RunMetrics& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto &x = a.epochs[i], &y = b.epochs[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.train_accuracy != y.train_accuracy ||
        x.test_loss != y.test_loss || x.test_accuracy != y.test_accuracy || x.lr != y.lr)
      return false;
  }
  return true;
}

}  // namespace

TEST(Adam, FirstStepIsAboutLearningRate) {
  Parameter<double> p{"w", Tensor<double>(Shape{1}, 0.5), Tensor<double>(Shape{1}, 1.0)};
  AdamState<double> st;
  adam_step<double>({&p}, st, 0.001);
  EXPECT_NEAR(0.5 - p.value[0], 0.001, 1e-6);
}

TEST(Adam, ZeroGradientIsIdentity) {
  Parameter<double> p{"w", Tensor<double>(Shape{3}, 0.25), Tensor<double>(Shape{3}, 0.0)};
  AdamState<double> st;
  for (int k = 0; k < 5; ++k) adam_step<double>({&p}, st, 0.01);
  for (double v : p.value.data()) EXPECT_EQ(v, 0.25);
}

TEST(Plateau, DecreasingLossNeverReduces) {
  PlateauScheduler s(0.001);
  for (int e = 0; e < 50; ++e) s.step(10.0 - 0.1 * e);
  EXPECT_EQ(s.lr(), 0.001);
  EXPECT_EQ(s.reductions(), 0u);
}

TEST(Plateau, ConstantLossReducesAfterElevenStagnantEpochs) {
  PlateauScheduler s(0.001, PlateauConfig{0.1, 10, 1e-4, 0.0});
  s.step(1.0);  // first epoch sets the best value
  for (int e = 1; e <= 10; ++e) {
    s.step(1.0);
    EXPECT_EQ(s.lr(), 0.001) << "stagnant epoch " << e;
  }
  s.step(1.0);
  EXPECT_NEAR(s.lr(), 0.0001, 1e-18);
}

TEST(Plateau, FactorAppliedTwice) {
  PlateauScheduler s(0.001, PlateauConfig{0.1, 0, 1e-4, 0.0});
  s.step(1.0);
  s.step(1.0);
  EXPECT_NEAR(s.lr(), 1e-4, 1e-18);
  s.step(1.0);
  EXPECT_NEAR(s.lr(), 1e-5, 1e-18);
}

TEST(Trainer, ZeroLearningRateFreezesParameters) {
  const Dataset d = striped(60, 1);
  TrainConfig c = small_config("mini_cnn");
  c.mode = ClassifierMode::original;  // no batchnorm, so batch order cannot change the loss
  c.lr = 0;
  c.augment = false;
  Trainer t(c, d);
  std::vector<Tensor<float>> before;
  for (auto* p : t.model().parameters()) before.push_back(p->value);
  const auto a = t.run_epoch(d), b = t.run_epoch(d);
  const auto params = t.model().parameters();
  for (std::size_t k = 0; k < params.size(); ++k) EXPECT_EQ(params[k]->value, before[k]) << params[k]->name;
  EXPECT_NEAR(a.train_loss, b.train_loss, 1e-12);
}

TEST(Trainer, SameSeedSameMetrics) {
  const Dataset train = striped(80, 2), test = striped(40, 3);
  auto run = [&] {
    Trainer t(small_config(), train);
    return t.fit(train, &test, 2);
  };
  EXPECT_TRUE(same_epochs(run(), run()));
}

TEST(Trainer, LossStaysFinite) {
  const Dataset d = striped(60, 4);
  Trainer t(small_config(), d);
  for (const auto& e : t.fit(d, nullptr, 2).epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(Trainer, EveryHeadReceivesGradient) {
  const Dataset d = striped(20, 5);
  TrainConfig c = small_config();
  Trainer t(c, d);
  std::vector<std::size_t> idx(20);
  for (std::size_t i = 0; i < 20; ++i) idx[i] = i;
  const SeededRng rng(0);
  const auto x = t.make_batch(d, idx, true, &rng);
  auto& m = t.model();
  m.zero_grad();
  const auto out = m.forward(x, Mode::train);
  Tensor<float> g(out.scores.shape());
  const std::size_t N = m.num_classes();
  for (std::size_t b = 0; b < 20; ++b) {
    const auto lg = softmax_cross_entropy<float>(out.scores.data().subspan(b * N, N), d.labels[b]);
    for (std::size_t k = 0; k < N; ++k) g[b * N + k] = lg.grad[k] / 20.f;
  }
  m.backward(g);
  for (std::size_t h = 0; h < m.num_heads(); ++h) {
    for (auto* p : m.head(h).parameters()) {
      double norm = 0;
      for (float v : p->grad.data()) norm += std::abs(v);
      EXPECT_GT(norm, 0.0) << p->name;
    }
  }
}

TEST(Trainer, UniformScoresPredictLabelZero) {
  const Dataset d = striped(100, 6);
  Trainer t(small_config(), d);
  for (auto* p : t.model().parameters()) p->value.fill(0.f);
  const auto r = t.evaluate(d);
  std::size_t zeros = 0;
  for (auto l : d.labels) zeros += l == 0;
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(zeros) / static_cast<double>(d.size()));
  for (auto p : r.predictions) EXPECT_EQ(p, 0u);
}

TEST(Trainer, EvaluateIsRepeatableAndRejectsEmpty) {
  const Dataset d = striped(50, 7);
  Trainer t(small_config(), d);
  const auto a = t.evaluate(d), b = t.evaluate(d);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.predictions, b.predictions);
  Dataset empty = d;
  empty.labels.clear();
  empty.pixels.clear();
  EXPECT_THROW(t.evaluate(empty), ContractError);
  EXPECT_THROW(Trainer(small_config(), empty), ContractError);
}

TEST(Trainer, NonFiniteLossNamesTheLayer) {
  const Dataset d = striped(20, 8);
  TrainConfig c = small_config("mini_cnn");
  c.augment = false;
  Trainer t(c, d);
  auto params = t.model().parameters();
  params.front()->value.fill(std::numeric_limits<float>::quiet_NaN());
  try {
    t.run_epoch(d);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("set1.conv1"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ContinuationMatchesUninterruptedRun) {
  const Dataset train = striped(80, 9), test = striped(40, 10);
  const TrainConfig c = small_config();
  Trainer straight(c, train);
  const auto full = straight.fit(train, &test, 3);

  Trainer first(c, train);
  first.fit(train, &test, 0);
  const fs::path path = temp_file("continuation.ckpt");
  first.save(path);
  Trainer resumed(c, train);
  resumed.load(path);
  EXPECT_TRUE(same_epochs(full, resumed.fit(train, &test, 3)));

  Trainer mid(c, train);
  RunMetrics split = mid.fit(train, &test, 1);
  mid.save(path);
  Trainer rest(c, train);
  rest.load(path);
  for (const auto& e : rest.fit(train, &test, 2).epochs) split.epochs.push_back(e);
  EXPECT_TRUE(same_epochs(full, split));
  fs::remove(path);
}

TEST(Checkpoint, CorruptMagicIsFormatError) {
  const Dataset d = striped(20, 11);
  Trainer t(small_config(), d);
  const fs::path path = temp_file("corrupt.ckpt");
  t.save(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  EXPECT_THROW(t.load(path), FormatError);
  fs::remove(path);
}

TEST(Checkpoint, DifferentModelNamesTheTensor) {
  const Dataset d10 = striped(20, 12), d3 = striped(20, 12, 3);
  Trainer a(small_config(), d10);
  const fs::path path = temp_file("shape.ckpt");
  a.save(path);
  Trainer b(small_config(), d3);
  try {
    b.load(path);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("head1.fc"), std::string::npos) << e.what();
  }
  fs::remove(path);
}
