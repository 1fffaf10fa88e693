#include "ca3/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "ca3/evaluation.hpp"
#include "ca3/ops.hpp"
#include "ca3/random.hpp"

namespace ca3 {
namespace {

Tensor label_tensor(const Dataset& data, const std::vector<std::size_t>& rows) {
  std::vector<float> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = static_cast<float>(data.labels.at(rows[i]));
  return Tensor(Shape{rows.size()}, std::move(y));
}

Tensor batch_loss(Tape& tape, const ModelBundle& bundle, const Tensor& x, const Tensor& y, const TrainConfig& cfg,
                  Rng* sampler) {
  const TargetOutput out = bundle.forward_with_taps(tape, x, sampler);
  const Tensor score = bundle.alarm_forward(tape, stack_activations(tape, out.activations));
  Tensor loss = combined_loss(tape, x, out.reconstruction, y, score, cfg.gamma, cfg.pos_weight);
  if (bundle.target_config().variational) {
    const auto beta = static_cast<float>(bundle.target_config().kl_weight);
    loss = ops::add(tape, loss, ops::scale(tape, bundle.kl_divergence(tape, out), beta));
  }
  return loss;
}

std::vector<std::vector<float>> snapshot(const std::vector<NamedParameter>& params) {
  std::vector<std::vector<float>> copy;
  copy.reserve(params.size());
  for (const auto& p : params) copy.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return copy;
}

void restore(const std::vector<NamedParameter>& params, const std::vector<std::vector<float>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    std::copy(saved[i].begin(), saved[i].end(), t.mutable_data().begin());
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("train.gamma must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
  if (!(pos_weight > 0.0)) throw ConfigError("train.pos_weight must be > 0");
}

OptimizerState make_optimizer_state(const std::vector<NamedParameter>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.size(), 0.0);
    s.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adam_step(const std::vector<NamedParameter>& params, OptimizerState& state, double learning_rate) {
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw NumericError("adam_step: parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    auto w = t.mutable_data();
    const auto g = t.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double step = learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
      w[j] = static_cast<float>(w[j] - step);
    }
  }
}

SplitDataset stratified_split(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n == 0) throw DataError("stratified_split: empty dataset");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(ratios[0] > 0) || ratios[1] < 0 || ratios[2] < 0) throw ConfigError("stratified_split: invalid ratios");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[dataset.has_labels() ? dataset.labels[i] : 0].push_back(i);

  SplitDataset split;
  split.ratios = ratios;
  split.seed = seed;
  Rng rng(seed);
  for (auto& [label, rows] : by_class) {
    rng.shuffle(rows);
    const auto count = static_cast<double>(rows.size());
    const auto n_val = static_cast<std::size_t>(std::llround(count * ratios[1] / total));
    const auto n_test = static_cast<std::size_t>(std::llround(count * ratios[2] / total));
    const std::size_t held = std::min(rows.size(), n_val + n_test);
    const std::size_t test_end = std::min(n_test, held);
    split.test.insert(split.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(test_end));
    split.validation.insert(split.validation.end(), rows.begin() + static_cast<std::ptrdiff_t>(test_end),
                            rows.begin() + static_cast<std::ptrdiff_t>(held));
    split.train.insert(split.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(held), rows.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<std::size_t> stratified_subsample(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (count == 0) throw ConfigError("stratified_subsample: count must be >= 1");
  if (count >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[dataset.has_labels() ? dataset.labels[i] : 0].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> picked;
  std::size_t assigned = 0;
  std::size_t seen = 0;
  for (auto& [label, rows] : by_class) {
    rng.shuffle(rows);
    seen += rows.size();
    // Cumulative rounding keeps the total exactly `count`.
    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(count) * static_cast<double>(seen) /
                                                              static_cast<double>(n)));
    const std::size_t take = std::min(rows.size(), target - assigned);
    picked.insert(picked.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
    assigned += take;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset make_one_vs_all(const Dataset& dataset, int normal_class) {
  if (!dataset.has_labels()) throw DataError("make_one_vs_all: dataset has no labels");
  if (std::find(dataset.labels.begin(), dataset.labels.end(), normal_class) == dataset.labels.end()) {
    throw DataError("make_one_vs_all: class " + std::to_string(normal_class) + " does not occur in the dataset");
  }
  Dataset out = dataset;
  for (auto& y : out.labels) y = y == normal_class ? 0 : 1;
  return out;
}

Tensor combined_loss(Tape& tape, const Tensor& x, const Tensor& x_hat, const Tensor& y, const Tensor& y_hat,
                     double gamma, double pos_weight) {
  const std::size_t n = x.dim(0);
  if (y.size() != n || y_hat.size() != n) {
    throw ShapeError("combined_loss: batch of " + std::to_string(n) + " samples with labels " + to_string(y.shape()) +
                     " and scores " + to_string(y_hat.shape()));
  }
  if (!(gamma >= 0.0)) throw ConfigError("combined_loss: gamma must be >= 0");
  std::vector<float> keep(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 0.0f && y[i] != 1.0f) {
      throw DataError("combined_loss: label " + std::to_string(y[i]) + " at sample " + std::to_string(i) +
                      " is not 0 or 1");
    }
    keep[i] = 1.0f - y[i];
  }
  const Tensor per_sample = ops::per_sample_mse(tape, x, x_hat);
  const Tensor masked = ops::mul(tape, per_sample, Tensor(Shape{n}, std::move(keep)));
  const Tensor recon = ops::scale(tape, ops::sum(tape, masked), 1.0f / static_cast<float>(n));
  const Tensor cls = ops::bce(tape, y, y_hat, static_cast<float>(pos_weight));
  return ops::add(tape, recon, ops::scale(tape, cls, static_cast<float>(gamma)));
}

double evaluate_loss(const ModelBundle& bundle, const Dataset& data, const std::vector<std::size_t>& indices,
                     const TrainConfig& cfg) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0;
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 256);
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::vector<std::size_t> rows(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                        indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + bs)));
    Tape tape(Tape::Mode::inference);
    const Tensor loss = batch_loss(tape, bundle, gather_rows(data.features, rows), label_tensor(data, rows), cfg, nullptr);
    total += static_cast<double>(loss.item()) * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(indices.size());
}

TrainResult fit(ModelBundle& bundle, const Dataset& data, const SplitDataset& split, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw DataError("fit: the train split is empty");
  if (!data.has_labels()) throw DataError("fit: dataset has no labels");
  const Shape expected = bundle.target_config().sample_shape();
  if (!std::equal(expected.begin(), expected.end(), data.features.shape().begin() + 1) ||
      data.features.rank() != expected.size() + 1) {
    throw ShapeError("fit: model expects samples " + to_string(expected) + ", dataset has features " +
                     to_string(data.features.shape()));
  }

  const auto& params = bundle.parameters();
  OptimizerState state = make_optimizer_state(params);
  Rng shuffler(cfg.seed);
  Rng sampler(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  auto best = snapshot(params);
  std::size_t since_best = 0;
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffler.shuffle(order);
    double train_total = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::vector<std::size_t> rows(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      Tape tape;
      const Tensor loss = batch_loss(tape, bundle, gather_rows(data.features, rows), label_tensor(data, rows), cfg,
                                     bundle.target_config().variational ? &sampler : nullptr);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      for (const auto& p : params) p.tensor.zero_grad();
      tape.backward(loss);
      adam_step(params, state, cfg.learning_rate);
      train_total += value * static_cast<double>(rows.size());
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = train_total / static_cast<double>(order.size());
    row.val_loss = evaluate_loss(bundle, data, split.validation, cfg);
    row.val_auc = std::numeric_limits<double>::quiet_NaN();
    if (!split.validation.empty()) {
      ScoreSet s;
      s.scores = score(bundle, gather_rows(data.features, split.validation), {ScoreMode::alarm});
      for (auto i : split.validation) s.labels.push_back(data.labels[i]);
      if (has_both_classes(s)) row.val_auc = roc_auc(s);
    }
    if (!std::isfinite(row.train_loss) || (!split.validation.empty() && !std::isfinite(row.val_loss))) {
      throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    const double monitored = split.validation.empty() ? row.train_loss : row.val_loss;
    if (monitored < result.best_loss) {
      result.best_loss = monitored;
      result.best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  restore(params, best);
  for (const auto& p : params) p.tensor.clear_grad();
  return result;
}

std::string training_log_header() { return "epoch,train_loss,val_loss,val_auc,wall_ms"; }

std::string training_log_row(const EpochLog& row) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.1f", row.wall_ms);
  return std::to_string(row.epoch) + "," + fmt(row.train_loss) + "," + fmt(row.val_loss) + "," + fmt(row.val_auc) +
         "," + wall;
}

}  // namespace ca3
