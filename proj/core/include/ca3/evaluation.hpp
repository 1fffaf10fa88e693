#pragma once

// ROC-AUC, baseline scoring and the repeated-run experiment driver.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ca3/data.hpp"
#include "ca3/networks.hpp"
#include "ca3/training.hpp"

namespace ca3 {

struct ScoreSet {
  std::vector<float> scores;
  std::vector<int> labels;  // 1 = anomalous
};

bool has_both_classes(const ScoreSet& s);

// Mann-Whitney statistic via ranks with tied groups sharing their mean rank,
// i.e. P(anomaly outscores typical) with ties counted 1/2.
double roc_auc(const ScoreSet& s);

// Per-sample reconstruction MSE of the selected rows.
ScoreSet baseline_recon_score(const ModelBundle& bundle, const Dataset& data, const std::vector<std::size_t>& rows);

struct ExperimentSpec {
  std::optional<int> normal_class;  // one-vs-all relabeling when set
  std::size_t subset = 0;           // stratified per-iteration subsample; 0 keeps every row
  std::size_t iterations = 1;
  std::uint64_t base_seed = 0;      // iteration i uses base_seed + i
  std::array<double, 3> split_ratios{8, 1, 1};
  std::optional<NormMethod> normalization;  // fitted on the train split
  std::vector<ScoreMode> modes{ScoreMode::alarm, ScoreMode::recon, ScoreMode::combined};
  double combined_lambda = 1.0;
  TargetConfig target;  // tabular width is taken from the (normalized) data
  AlarmConfig alarm;
  TrainConfig train;
  std::size_t threads = 1;

  void validate() const;
};

struct ModeSummary {
  ScoreMode mode = ScoreMode::alarm;
  std::vector<double> aucs;  // one per iteration
  double mean = 0;
  double std = 0;  // population formula (divides by the number of runs)
};

struct EvalReport {
  std::string dataset;
  std::optional<int> normal_class;
  double gamma = 0;
  std::vector<std::uint64_t> seeds;
  std::string architecture;
  std::vector<ModeSummary> modes;

  const ModeSummary& mode(ScoreMode m) const;
};

double mean_of(const std::vector<double>& values);
double population_std(const std::vector<double>& values);
ModeSummary summarize(ScoreMode mode, std::vector<double> aucs);

std::string describe_architecture(const TargetConfig& target, const AlarmConfig& alarm);

// Any failing iteration aborts the run; the error names the iteration index.
EvalReport run_experiment(const Dataset& data, const ExperimentSpec& spec);

enum class ReportFormat { csv, markdown };

// One CSV row per (dataset, normal_class, mode, gamma); doubles use 17
// significant digits so a parse reproduces them exactly.
std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format);
std::vector<EvalReport> parse_report_csv(const std::string& text);

}  // namespace ca3
