#pragma once

// Joint end-to-end training of the target autoencoder and the alarm network.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ca3/data.hpp"
#include "ca3/networks.hpp"

namespace ca3 {

struct TrainConfig {
  double gamma = 1.0;  // weight of the classification term
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 10;
  double pos_weight = 1.0;  // BCE weight of anomalous samples

  void validate() const;
};

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimizerState make_optimizer_state(const std::vector<NamedParameter>& params);

// One bias-corrected adaptive-moment update of every parameter.
void adam_step(const std::vector<NamedParameter>& params, OptimizerState& state, double learning_rate);

struct SplitDataset {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::array<double, 3> ratios{8, 1, 1};
  std::uint64_t seed = 0;
};

// Per-class shuffled partition; each class contributes round(n_c * r / sum)
// rows to validation and test, the remainder to train. Index lists are sorted.
SplitDataset stratified_split(const Dataset& dataset, std::array<double, 3> ratios = {8, 1, 1},
                              std::uint64_t seed = 0);

// Sorted indices of a class-stratified random subset of `count` rows.
std::vector<std::size_t> stratified_subsample(const Dataset& dataset, std::size_t count, std::uint64_t seed);

// Binary relabeling: 0 iff the original label equals `normal_class`.
Dataset make_one_vs_all(const Dataset& dataset, int normal_class);

// mean_i[(1 - y_i) * mse_i(x, x_hat)] + gamma * bce(y, y_hat).
// The reconstruction term of anomalous samples (y = 1) is exactly zero and
// the mean divides by the full batch size.
Tensor combined_loss(Tape& tape, const Tensor& x, const Tensor& x_hat, const Tensor& y, const Tensor& y_hat,
                     double gamma, double pos_weight = 1.0);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_auc = 0;  // NaN when the validation split lacks a class
  double wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_loss = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch training on split.train, early-stopped on validation loss.
// The parameters of the best epoch are restored before returning.
TrainResult fit(ModelBundle& bundle, const Dataset& data, const SplitDataset& split, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

// Mean combined loss over `indices`, without recording gradients.
double evaluate_loss(const ModelBundle& bundle, const Dataset& data, const std::vector<std::size_t>& indices,
                     const TrainConfig& cfg);

std::string training_log_header();
std::string training_log_row(const EpochLog& row);

}  // namespace ca3
