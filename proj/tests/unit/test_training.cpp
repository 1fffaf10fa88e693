#include <doctest.h>

#include <cmath>
#include <map>

#include "ca3/evaluation.hpp"
#include "ca3/ops.hpp"
#include "ca3/training.hpp"
#include "support.hpp"

using namespace ca3;
using ca3::test::random_tensor;

TEST_SUITE("training") {
  TEST_CASE("all-anomalous batch: loss is gamma * BCE and the decoder gets no gradient") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng.below(8);
      const Tensor x = random_tensor(rng, {n, 6});
      const Tensor xh = random_tensor(rng, {n, 6}, -1, 1, true);
      const Tensor y = Tensor::full({n}, 1.0f);
      const Tensor yh = random_tensor(rng, {n, 1}, 0.05, 0.95, true);
      const double gamma = rng.uniform(0, 10);
      Tape tape;
      const Tensor loss = combined_loss(tape, x, xh, y, yh, gamma);
      Tape ref(Tape::Mode::inference);
      const float bce = ops::bce(ref, y, yh.reshaped({n})).item();
      CHECK(loss.item() == static_cast<float>(gamma) * bce);
      tape.backward(loss);
      for (float g : xh.grad()) CHECK(g == 0.0f);
    }
  }

  TEST_CASE("all-typical batch with gamma = 0 equals MSE") {
    Rng rng(2);
    const Tensor x = random_tensor(rng, {5, 4});
    const Tensor xh = random_tensor(rng, {5, 4});
    const Tensor y = Tensor::zeros({5});
    const Tensor yh = random_tensor(rng, {5, 1}, 0.1, 0.9);
    Tape tape(Tape::Mode::inference);
    const float loss = combined_loss(tape, x, xh, y, yh, 0.0).item();
    CHECK(loss == doctest::Approx(ops::mse(tape, x, xh).item()).epsilon(1e-6));
  }

  TEST_CASE("reconstruction term divides by the full batch") {
    const Tensor x(Shape{2, 1}, {0, 0});
    const Tensor xh(Shape{2, 1}, {2, 2});
    const Tensor y(Shape{2}, {0, 1});
    const Tensor yh(Shape{2, 1}, {0.5f, 0.5f});
    Tape tape(Tape::Mode::inference);
    CHECK(combined_loss(tape, x, xh, y, yh, 0.0).item() == doctest::Approx(2.0));
    CHECK_THROWS_AS(combined_loss(tape, x, xh, Tensor(Shape{2}, {0, 2}), yh, 1.0), DataError);
    CHECK_THROWS_AS(combined_loss(tape, x, xh, Tensor::zeros({3}), yh, 1.0), ShapeError);
  }

  TEST_CASE("first Adam step moves each weight by about the learning rate") {
    const Tensor w(Shape{3}, {1, 1, 1}, true);
    std::vector<NamedParameter> params{{"w", w}};
    auto g = w.mutable_grad();
    g[0] = 0.5f;
    g[1] = -2.0f;
    g[2] = 1e-3f;
    OptimizerState state = make_optimizer_state(params);
    adam_step(params, state, 0.01);
    CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(1.01).epsilon(1e-6));
    CHECK(w[2] == doctest::Approx(1.0 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-6));
  }

  TEST_CASE("Adam matches a hand-rolled reference over several steps") {
    const Tensor w(Shape{1}, {0.3f}, true);
    std::vector<NamedParameter> params{{"w", w}};
    OptimizerState state = make_optimizer_state(params);
    double ref = 0.3, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
      const double g = 2 * ref - 1;  // gradient of (w - 0.5)^2
      w.mutable_grad()[0] = static_cast<float>(2 * w[0] - 1);
      adam_step(params, state, 0.1);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(w[0] == doctest::Approx(ref).epsilon(1e-5));
    }
  }

  TEST_CASE("Adam names the parameter without a gradient") {
    const Tensor w(Shape{1}, {0.0f}, true);
    std::vector<NamedParameter> params{{"alarm.out.bias", w}};
    OptimizerState state = make_optimizer_state(params);
    CHECK_THROWS_WITH_AS(adam_step(params, state, 0.1), doctest::Contains("alarm.out.bias"), NumericError);
  }

  TEST_CASE("stratified split counts and determinism") {
    const Dataset d = synth_two_gaussian(900, 100, 2, 3.0, 0);
    const SplitDataset a = stratified_split(d, {8, 1, 1}, 42);
    const SplitDataset b = stratified_split(d, {8, 1, 1}, 42);
    const SplitDataset c = stratified_split(d, {8, 1, 1}, 43);
    auto count = [&](const std::vector<std::size_t>& rows) {
      std::map<int, std::size_t> m;
      for (auto r : rows) ++m[d.labels[r]];
      return m;
    };
    CHECK(count(a.train) == std::map<int, std::size_t>{{0, 720}, {1, 80}});
    CHECK(count(a.validation) == std::map<int, std::size_t>{{0, 90}, {1, 10}});
    CHECK(count(a.test) == std::map<int, std::size_t>{{0, 90}, {1, 10}});
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.test != c.test);
    CHECK(count(c.test) == count(a.test));
    std::vector<int> seen(d.size(), 0);
    for (const auto* part : {&a.train, &a.validation, &a.test})
      for (auto r : *part) ++seen[r];
    for (int s : seen) CHECK(s == 1);
  }

  TEST_CASE("stratified subsample keeps class proportions") {
    const Dataset d = synth_two_gaussian(900, 100, 2, 3.0, 0);
    const auto rows = stratified_subsample(d, 200, 3);
    CHECK(rows.size() == 200);
    std::size_t anomalous = 0;
    for (auto r : rows) anomalous += static_cast<std::size_t>(d.labels[r]);
    CHECK(anomalous == 20);
  }

  TEST_CASE("one-vs-all relabeling") {
    Dataset d;
    d.features = Tensor::zeros({4, 1});
    d.labels = {0, 3, 0, 7};
    CHECK(make_one_vs_all(d, 0).labels == std::vector<int>{0, 1, 0, 1});
    CHECK(make_one_vs_all(d, 3).labels == std::vector<int>{1, 0, 1, 1});
    CHECK_THROWS_AS(make_one_vs_all(d, 5), DataError);
  }

  TEST_CASE("fit lowers the loss, logs each epoch and restores the best epoch") {
    const Dataset raw = synth_two_gaussian(200, 20, 4, 5.0, 0);
    const SplitDataset split = stratified_split(raw, {8, 1, 1}, 0);
    const Dataset d = normalize(raw, NormMethod::zscore, split.train).dataset;
    ModelBundle b = ModelBundle::build(TargetConfig::tabular(4), AlarmConfig{}, 0);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    std::size_t calls = 0;
    const TrainResult r = fit(b, d, split, cfg, [&](const EpochLog&) { ++calls; });
    REQUIRE(r.log.size() == calls);
    CHECK(r.log.back().train_loss < r.log.front().train_loss);
    double best = 1e300;
    for (const auto& e : r.log) best = std::min(best, e.val_loss);
    CHECK(r.best_loss == best);
    CHECK(evaluate_loss(b, d, split.validation, cfg) == doctest::Approx(best).epsilon(1e-6));
  }

  TEST_CASE("early stopping halts after the patience window") {
    const Dataset d = synth_two_gaussian(100, 10, 3, 5.0, 1);
    const SplitDataset split = stratified_split(d, {8, 1, 1}, 1);
    ModelBundle b = ModelBundle::build(TargetConfig::tabular(3), AlarmConfig{}, 1);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    cfg.early_stop_patience = 2;
    const TrainResult r = fit(b, d, split, cfg);
    CHECK(r.log.size() < 200);
    CHECK(r.log.size() - r.best_epoch == 2);
  }

  TEST_CASE("divergence is reported with epoch and batch") {
    Dataset d = synth_two_gaussian(50, 10, 3, 5.0, 2);
    d.features.mutable_data()[0] = std::numeric_limits<float>::infinity();
    const SplitDataset split = stratified_split(d, {8, 1, 1}, 0);
    SplitDataset with_bad = split;
    with_bad.train.push_back(0);
    std::sort(with_bad.train.begin(), with_bad.train.end());
    with_bad.train.erase(std::unique(with_bad.train.begin(), with_bad.train.end()), with_bad.train.end());
    ModelBundle b = ModelBundle::build(TargetConfig::tabular(3), AlarmConfig{}, 0);
    TrainConfig cfg;
    cfg.epochs = 2;
    CHECK_THROWS_WITH_AS(fit(b, d, with_bad, cfg), doctest::Contains("epoch 1, batch"), NumericError);
  }

  TEST_CASE("train config validation") {
    TrainConfig c;
    c.gamma = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
