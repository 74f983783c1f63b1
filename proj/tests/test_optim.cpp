#include <doctest.h>

#include "oracles.hpp"
#include "rcnet/checkpoint.hpp"
#include "rcnet/optim.hpp"

using namespace rcnet;

namespace {

ModelParams<double> single(double w) {
  return ModelParams<double>(RCNetConfig{}, {{"w", TensorD({1}, {w}), true},
                                             {"stat", TensorD({1}, {5.0}), false}});
}

std::vector<Sample> tiny_set(int n, Index size = 16) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i)
    out.push_back(synthetic_fundus("t" + std::to_string(i), size, size, 77));
  return out;
}

}  // namespace

TEST_CASE("median frequency weights") {
  const ClassWeights even = median_frequency_weights(0.5, 0.5);
  CHECK(even.background == 1.0);
  CHECK(even.vessel == 1.0);
  const ClassWeights w = median_frequency_weights(0.9, 0.1);
  CHECK(w.background == doctest::Approx(0.5556).epsilon(1e-3));
  CHECK(w.vessel == doctest::Approx(5.0).epsilon(1e-3));
  CHECK(w.background * 0.9 == doctest::Approx(w.vessel * 0.1));
  CHECK_THROWS_AS(median_frequency_weights(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("class frequencies count FOV pixels of images containing the class") {
  Sample a;
  a.image = TensorF({3, 2, 2});
  a.label = TensorF({2, 2}, {1, 0, 0, 0});
  a.fov = TensorF({2, 2}, {1, 1, 1, 0});
  Sample b = a;
  b.label = TensorF({2, 2}, {0, 0, 0, 1});  // vessel outside the FOV
  const auto [f0, f1] = class_frequencies({a, b});
  CHECK(f0 == doctest::Approx(5.0 / 6.0));
  CHECK(f1 == doctest::Approx(1.0 / 3.0));
  Sample none = a;
  none.label = TensorF({2, 2});
  CHECK_THROWS_AS(class_frequencies({none}), std::invalid_argument);
}

TEST_CASE("sgd step") {
  ModelParams<double> p = single(1.0);
  sgd_step<double>(p, {TensorD({1}, {0.5}), TensorD({1}, {100.0})}, 0.1);
  CHECK(p.at("w")[0] == doctest::Approx(0.95));
  CHECK(p.at("stat")[0] == 5.0);  // not learnable

  ModelParams<double> q = single(2.0);
  sgd_step<double>(q, {TensorD({1}), std::nullopt}, 0.1);
  CHECK(q.at("w")[0] == 2.0);

  // x^2 from 1 with lr 0.1 twice
  ModelParams<double> r = single(1.0);
  for (int i = 0; i < 2; ++i) {
    Tape<double> t;
    const NodeId x = t.leaf(r.at("w"));
    const auto g = t.backward(sum(t, mul(t, x, x)));
    sgd_step<double>(r, {g.at(x), std::nullopt}, 0.1);
  }
  CHECK(r.at("w")[0] == doctest::Approx(0.64).epsilon(1e-12));

  CHECK_THROWS_AS(sgd_step<double>(r, {TensorD({2}), std::nullopt}, 0.1), TrainingError);
  CHECK_THROWS_AS(sgd_step<double>(r, {TensorD({1})}, 0.1), TrainingError);
  ModelParams<double> s = single(3.0);
  CHECK_THROWS_AS(
      sgd_step<double>(s, {TensorD({1}, {std::numeric_limits<double>::quiet_NaN()}), std::nullopt},
                       0.1),
      TrainingError);
  CHECK(s.at("w")[0] == 3.0);
}

TEST_CASE("property: sgd step is linear in the gradient") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD g1 = oracle::random<double>({1}, rng), g2 = oracle::random<double>({1}, rng);
    ModelParams<double> a = single(0.25), b = single(0.25);
    sgd_step<double>(a, {add(g1, g2), std::nullopt}, 0.125);
    sgd_step<double>(b, {g1, std::nullopt}, 0.125);
    sgd_step<double>(b, {g2, std::nullopt}, 0.125);
    CHECK(a.at("w")[0] == doctest::Approx(b.at("w")[0]).epsilon(1e-15));
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.loss_weights = ClassWeights{0, 1};
  CHECK_THROWS(c.validate());
}

TEST_CASE("training log and learning") {
  const std::vector<Sample> data = tiny_set(3);
  ModelParams<float> p = build<float>(RCNetConfig{}, 1);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.05;
  std::vector<EpochLog> seen;
  const TrainResult r = train(p, SampleSource::of(data), cfg, data,
                              [&](const EpochLog& e) { seen.push_back(e); });
  CHECK(r.log.size() == 12);
  CHECK(seen.size() == 12);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    CHECK(r.log[i].epoch == static_cast<int>(i) + 1);
    CHECK(std::isfinite(r.log[i].mean_loss));
    CHECK(r.log[i].train_acc >= 0.0);
    CHECK(r.log[i].train_acc <= 1.0);
  }
  CHECK(r.log.back().mean_loss < r.log.front().mean_loss);
  const ClassWeights auto_w = median_frequency_weights(data);
  CHECK(r.weights.vessel == auto_w.vessel);

  std::ostringstream os;
  write_epoch_csv(os, r.log[0]);
  const std::string line = os.str();
  CHECK(line.starts_with("1,"));
  CHECK(std::count(line.begin(), line.end(), ',') == 3);
}

TEST_CASE("learning rate zero is a fixed point for learnable parameters") {
  const std::vector<Sample> data = tiny_set(2);
  ModelParams<float> p = build<float>(RCNetConfig{}, 2);
  const ModelParams<float> before = p;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  train(p, SampleSource::of(data), cfg, data);
  for (std::size_t i = 0; i < p.entries().size(); ++i)
    if (p.entries()[i].learnable) CHECK(p.entries()[i].value == before.entries()[i].value);
}

TEST_CASE("deterministic training is byte-reproducible") {
  const std::vector<Sample> data = tiny_set(5);
  auto run = [&](std::uint64_t seed, std::optional<ClassWeights> w) {
    ModelParams<float> p = build<float>(RCNetConfig{}, seed);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = seed;
    cfg.loss_weights = w;
    train(p, SampleSource::of(data), cfg, data);
    return serialize_checkpoint(p);
  };
  const std::string a = run(5, std::nullopt);
  CHECK(a == run(5, std::nullopt));
  CHECK(a != run(6, std::nullopt));
  // explicit weights equal to the automatic ones change nothing
  CHECK(a == run(5, median_frequency_weights(data)));
  CHECK(a != run(5, ClassWeights{1, 1}));
}

TEST_CASE("prefetching does not change what is learned") {
  const std::vector<Sample> data = tiny_set(4);
  auto run = [&](bool deterministic) {
    ModelParams<float> p = build<float>(RCNetConfig{}, 3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 1;
    cfg.seed = 9;
    cfg.deterministic = deterministic;
    return train(p, SampleSource::of(data), cfg, data).log.size();
  };
  CHECK(run(false) == 2);
}

#ifdef NDEBUG
TEST_CASE("a diverging run aborts with context") {
  const std::vector<Sample> data = tiny_set(2);
  ModelParams<float> p = build<float>(RCNetConfig{}, 4);
  TrainConfig cfg;
  cfg.learning_rate = 1e30;
  cfg.epochs = 5;
  cfg.batch_size = 1;
  try {
    train(p, SampleSource::of(data), cfg, data);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
#endif
