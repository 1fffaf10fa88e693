#pragma once

// Dataset ingestion: IDX image archives, delimited text with a header row,
// deduplication, train-split-fitted normalization and a synthetic generator.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ca3/tensor.hpp"

namespace ca3 {

enum class NormMethod { zscore, minmax };

const char* to_string(NormMethod m);
NormMethod parse_norm_method(const std::string& name);

// Per-feature affine map (x - offset) / scale, fitted on a train split.
// Features constant on the fit rows are dropped and listed in `dropped`.
struct NormalizationRecord {
  NormMethod method = NormMethod::zscore;
  std::size_t input_width = 0;
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;
  std::vector<double> offset;
  std::vector<double> scale;
};

// Column layout learned from a delimited file; re-applied when scoring new
// files so the feature vector keeps the same width and order.
struct CsvSchema {
  struct Column {
    std::string name;
    bool categorical = false;
    std::vector<std::string> levels;  // one-hot order, first-seen
  };
  char delimiter = ',';
  std::string label_column;
  std::vector<std::string> positive_values;
  std::vector<Column> columns;  // feature columns in file order

  std::size_t width() const;
  std::vector<std::string> feature_names() const;
};

struct Dataset {
  std::string name;
  Tensor features;          // [N, C, H, W] images or [N, D] rows
  std::vector<int> labels;  // empty when unlabeled
  std::vector<std::string> feature_names;
  std::optional<CsvSchema> schema;
  std::optional<NormalizationRecord> normalization;

  std::size_t size() const { return features.defined() ? features.dim(0) : 0; }
  bool has_labels() const { return !labels.empty(); }
  bool is_image() const { return features.defined() && features.rank() == 4; }
  double anomaly_fraction() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// IDX archives (optionally gzip-compressed). Pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
bool is_idx_images_file(const std::string& path);
// Writes uncompressed IDX; pixels are rounded back to bytes.
void write_idx_images(const std::string& path, const Tensor& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

struct CsvOptions {
  std::string label_column;
  std::vector<std::string> positive_values;
  char delimiter = ',';
  std::vector<std::string> categorical_columns;  // forced categorical
  std::vector<std::string> drop_columns;
};

// A column is numeric when its first data cell parses as a number; other
// columns are one-hot encoded. Labels become 1 iff the cell is listed in
// positive_values.
Dataset load_csv(const std::string& path, const CsvOptions& options);
// Re-applies a fitted schema. Unseen categorical levels encode as all-zero;
// the label column is optional.
Dataset load_csv(const std::string& path, const CsvSchema& schema);
// Numeric CSV with a header; the label (if any) goes in a trailing "label" column.
void write_csv(const std::string& path, const Dataset& dataset);

// Drops exact duplicate (features, label) rows, keeping first occurrences.
Dataset dedup(const Dataset& dataset);

struct Normalized {
  Dataset dataset;
  NormalizationRecord record;
};
Normalized normalize(const Dataset& dataset, NormMethod method, const std::vector<std::size_t>& fit_indices);
Dataset apply_normalization(const Dataset& dataset, const NormalizationRecord& record);

// Typical rows ~ N(0, I_d), anomalous rows ~ N(separation * 1, I_d).
Dataset synth_two_gaussian(std::size_t n_typical, std::size_t n_anomalous, std::size_t dim, double separation,
                           std::uint64_t seed);

}  // namespace ca3
