#pragma once

// Run configuration for the ca3 command-line tool. The on-disk form is JSON;
// see README.md for the full key reference.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ca3/data.hpp"
#include "ca3/evaluation.hpp"
#include "ca3/serialization.hpp"

namespace ca3::cli {

struct DatasetSpec {
  std::string kind = "csv";  // csv | idx | synthetic
  std::string name;

  std::string path;  // csv
  std::string label_column = "label";
  std::vector<std::string> positive_values{"1"};
  std::string delimiter = ",";
  std::vector<std::string> categorical_columns;
  std::vector<std::string> drop_columns;
  bool dedup = false;

  std::string images;  // idx
  std::string labels;

  std::size_t n_typical = 1000;  // synthetic
  std::size_t n_anomalous = 100;
  std::size_t dim = 10;
  double separation = 6.0;
  std::uint64_t synth_seed = 0;

  // One-vs-all: each listed class is treated as normal in turn. Empty means
  // the labels are already 0 (typical) / 1 (anomalous).
  std::vector<int> normal_classes;
  bool all_classes = false;  // "normal_class": "all"
  std::string normalization = "none";  // none | zscore | minmax
  std::size_t subset = 0;
};

struct ExperimentPlan {
  std::size_t iterations = 1;
  std::vector<double> gammas{1.0};
  std::vector<std::string> modes{"alarm", "recon", "combined"};
  double combined_lambda = 1.0;
  std::array<double, 3> split{8, 1, 1};
  std::size_t threads = 1;
};

struct RunConfig {
  DatasetSpec dataset;
  TargetConfig target;
  AlarmConfig alarm;
  TrainConfig train;
  ExperimentPlan experiment;
  std::string output_dir = "ca3_out";
  std::string base_dir = ".";  // directory relative paths resolve against; not serialized

  void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

// Reads and validates a config file; relative data paths resolve against
// $CA3_DATA_ROOT when set, otherwise against the file's directory.
RunConfig load_run_config(const std::string& path);

std::string resolve_data_path(const RunConfig& c, const std::string& p);

struct LoadedData {
  Dataset dataset;
  std::optional<CsvSchema> schema;
};

LoadedData load_dataset(const RunConfig& c);

}  // namespace ca3::cli
