#include "ca3/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ca3/random.hpp"

namespace ca3 {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads a whole file, transparently inflating gzip content.
std::vector<unsigned char> read_file_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError(path + ": cannot open file");
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  for (;;) {
    const int got = gzread(f, buf, sizeof buf);
    if (got < 0) throw DataError(path + ": read error");
    if (got == 0) break;
    bytes.insert(bytes.end(), buf, buf + got);
  }
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  os.write(bytes, 4);
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Splits one record, honoring double-quoted fields with "" escapes.
std::vector<std::string> split_record(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  if (*first == '+') ++first;
  double v = 0;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

bool label_matches(const std::string& cell, const std::vector<std::string>& positives) {
  const auto num = parse_number(cell);
  for (const auto& p : positives) {
    if (cell == p) return true;
    if (num) {
      const auto pn = parse_number(p);
      if (pn && *pn == *num) return true;
    }
  }
  return false;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_table(const std::string& path, char delim) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_record(line, delim);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw DataError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw DataError(path + ": missing header row");
  return t;
}

std::string format_float(float v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

// Builds rows from a table and schema; `grow_levels` lets categorical
// columns learn new levels (fit) instead of mapping them to zeros (apply).
Dataset encode_table(const std::string& path, const CsvTable& table, CsvSchema& schema, bool grow_levels,
                     bool require_label) {
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < table.header.size(); ++i) col_of.emplace(table.header[i], i);

  std::optional<std::size_t> label_col;
  if (!schema.label_column.empty()) {
    auto it = col_of.find(schema.label_column);
    if (it != col_of.end()) {
      label_col = it->second;
    } else if (require_label) {
      throw DataError(path + ": label column '" + schema.label_column + "' not found in header");
    }
  }
  std::vector<std::size_t> source(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    auto it = col_of.find(schema.columns[c].name);
    if (it == col_of.end()) throw DataError(path + ": column '" + schema.columns[c].name + "' not found in header");
    source[c] = it->second;
  }

  if (grow_levels) {
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      auto& col = schema.columns[c];
      if (!col.categorical) continue;
      for (const auto& row : table.rows) {
        const auto& v = row[source[c]];
        if (std::find(col.levels.begin(), col.levels.end(), v) == col.levels.end()) col.levels.push_back(v);
      }
    }
  }

  const std::size_t width = schema.width();
  if (width == 0) throw DataError(path + ": no feature columns");
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError(path + ": no data rows");
  std::vector<float> data(n * width, 0.0f);
  std::vector<int> labels;
  if (label_col) labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    float* out = data.data() + r * width;
    std::size_t at = 0;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const auto& col = schema.columns[c];
      const auto& cell = row[source[c]];
      if (col.categorical) {
        auto it = std::find(col.levels.begin(), col.levels.end(), cell);
        if (it != col.levels.end()) out[at + static_cast<std::size_t>(it - col.levels.begin())] = 1.0f;
        at += col.levels.size();
      } else {
        const auto v = parse_number(cell);
        if (!v) {
          throw DataError(path + ": row " + std::to_string(r + 1) + ", column '" + col.name +
                          "': cannot parse '" + cell + "' as a number");
        }
        out[at++] = static_cast<float>(*v);
      }
    }
    if (label_col) labels[r] = label_matches(row[*label_col], schema.positive_values) ? 1 : 0;
  }
  Dataset ds;
  ds.name = path;
  ds.features = Tensor(Shape{n, width}, std::move(data));
  ds.labels = std::move(labels);
  ds.feature_names = schema.feature_names();
  ds.schema = schema;
  return ds;
}

}  // namespace

const char* to_string(NormMethod m) { return m == NormMethod::zscore ? "zscore" : "minmax"; }

NormMethod parse_norm_method(const std::string& name) {
  if (name == "zscore") return NormMethod::zscore;
  if (name == "minmax") return NormMethod::minmax;
  throw ConfigError("unknown normalization '" + name + "' (expected zscore or minmax)");
}

std::size_t CsvSchema::width() const {
  std::size_t w = 0;
  for (const auto& c : columns) w += c.categorical ? c.levels.size() : 1;
  return w;
}

std::vector<std::string> CsvSchema::feature_names() const {
  std::vector<std::string> names;
  for (const auto& c : columns) {
    if (!c.categorical) {
      names.push_back(c.name);
      continue;
    }
    for (const auto& level : c.levels) names.push_back(c.name + "=" + level);
  }
  return names;
}

double Dataset::anomaly_fraction() const {
  if (labels.empty()) return 0.0;
  std::size_t pos = 0;
  for (int y : labels) pos += y != 0;
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.name = name;
  out.features = gather_rows(features, indices);
  if (!labels.empty()) {
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(labels.at(i));
  }
  out.feature_names = feature_names;
  out.schema = schema;
  out.normalization = normalization;
  return out;
}

Tensor load_idx_images(const std::string& path) {
  const auto b = read_file_bytes(path);
  if (b.size() < 16) throw DataError(path + ": truncated IDX header");
  const auto magic = read_be32(b, 0);
  if (magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << path << ": bad IDX image magic 0x" << std::hex << std::setw(8) << std::setfill('0') << magic
       << " (expected 0x00000803)";
    throw DataError(os.str());
  }
  const std::size_t n = read_be32(b, 4), rows = read_be32(b, 8), cols = read_be32(b, 12);
  if (n == 0 || rows == 0 || cols == 0) throw DataError(path + ": IDX header has a zero dimension");
  const std::size_t need = 16 + n * rows * cols;
  if (b.size() < need) {
    throw DataError(path + ": truncated IDX payload (" + std::to_string(b.size()) + " bytes, header implies " +
                    std::to_string(need) + ")");
  }
  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(b[16 + i]) / 255.0f;
  return Tensor(Shape{n, 1, rows, cols}, std::move(pixels));
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto b = read_file_bytes(path);
  if (b.size() < 8) throw DataError(path + ": truncated IDX header");
  const auto magic = read_be32(b, 0);
  if (magic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << path << ": bad IDX label magic 0x" << std::hex << std::setw(8) << std::setfill('0') << magic
       << " (expected 0x00000801)";
    throw DataError(os.str());
  }
  const std::size_t n = read_be32(b, 4);
  if (b.size() < 8 + n) throw DataError(path + ": truncated IDX payload");
  return std::vector<int>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

bool is_idx_images_file(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) return false;
  unsigned char head[4] = {};
  const int got = gzread(f, head, 4);
  gzclose(f);
  return got == 4 && head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 0x03;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.name = images_path;
  ds.features = load_idx_images(images_path);
  ds.labels = load_idx_labels(labels_path);
  if (ds.labels.size() != ds.features.dim(0)) {
    throw DataError(labels_path + ": " + std::to_string(ds.labels.size()) + " labels for " +
                    std::to_string(ds.features.dim(0)) + " images in " + images_path);
  }
  return ds;
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DataError("write_idx_images: expected [N, 1, H, W], got " + to_string(images.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path + ": cannot open for writing");
  put_be32(os, kIdxImagesMagic);
  put_be32(os, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(os, static_cast<std::uint32_t>(images.dim(2)));
  put_be32(os, static_cast<std::uint32_t>(images.dim(3)));
  std::vector<char> bytes(images.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(images[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path + ": cannot open for writing");
  put_be32(os, kIdxLabelsMagic);
  put_be32(os, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) os.put(static_cast<char>(static_cast<unsigned char>(y)));
}

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  const CsvTable table = read_table(path, options.delimiter);
  CsvSchema schema;
  schema.delimiter = options.delimiter;
  schema.label_column = options.label_column;
  schema.positive_values = options.positive_values;
  if (!options.label_column.empty() &&
      std::find(table.header.begin(), table.header.end(), options.label_column) == table.header.end()) {
    throw DataError(path + ": label column '" + options.label_column + "' not found in header");
  }
  if (table.rows.empty()) throw DataError(path + ": no data rows");
  auto listed = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    const auto& name = table.header[i];
    if (name == options.label_column || listed(options.drop_columns, name)) continue;
    CsvSchema::Column col;
    col.name = name;
    col.categorical = listed(options.categorical_columns, name) || !parse_number(table.rows.front()[i]);
    schema.columns.push_back(std::move(col));
  }
  return encode_table(path, table, schema, true, true);
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  const CsvTable table = read_table(path, schema.delimiter);
  CsvSchema copy = schema;
  return encode_table(path, table, copy, false, false);
}

void write_csv(const std::string& path, const Dataset& dataset) {
  if (dataset.features.rank() != 2) throw DataError("write_csv: expected [N, D] features");
  std::ofstream os(path);
  if (!os) throw DataError(path + ": cannot open for writing");
  const std::size_t n = dataset.size(), d = dataset.features.dim(1);
  for (std::size_t j = 0; j < d; ++j) {
    if (j) os << ',';
    os << (j < dataset.feature_names.size() ? dataset.feature_names[j] : "f" + std::to_string(j));
  }
  if (dataset.has_labels()) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (j) os << ',';
      os << format_float(dataset.features[i * d + j]);
    }
    if (dataset.has_labels()) os << ',' << dataset.labels[i];
    os << '\n';
  }
}

Dataset dedup(const Dataset& dataset) {
  const std::size_t n = dataset.size();
  const std::size_t width = dataset.features.size() / n;
  std::unordered_set<std::string> seen;
  std::vector<std::size_t> keep;
  keep.reserve(n);
  std::string key(width * sizeof(float) + sizeof(int), '\0');
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(key.data(), dataset.features.data().data() + i * width, width * sizeof(float));
    const int label = dataset.has_labels() ? dataset.labels[i] : 0;
    std::memcpy(key.data() + width * sizeof(float), &label, sizeof(int));
    if (seen.insert(key).second) keep.push_back(i);
  }
  if (keep.size() == n) return dataset;
  return dataset.subset(keep);
}

Normalized normalize(const Dataset& dataset, NormMethod method, const std::vector<std::size_t>& fit_indices) {
  if (fit_indices.empty()) throw DataError("normalize: fit_indices is empty");
  if (dataset.features.rank() != 2) throw DataError("normalize: expected tabular [N, D] features");
  const std::size_t d = dataset.features.dim(1);
  const auto x = dataset.features.data();
  NormalizationRecord rec;
  rec.method = method;
  rec.input_width = d;
  for (std::size_t j = 0; j < d; ++j) {
    double offset = 0, scale = 0;
    if (method == NormMethod::zscore) {
      double sum = 0;
      for (auto i : fit_indices) sum += x[i * d + j];
      const double mu = sum / static_cast<double>(fit_indices.size());
      double ss = 0;
      for (auto i : fit_indices) ss += (x[i * d + j] - mu) * (x[i * d + j] - mu);
      offset = mu;
      scale = std::sqrt(ss / static_cast<double>(fit_indices.size()));
    } else {
      double lo = x[fit_indices.front() * d + j], hi = lo;
      for (auto i : fit_indices) {
        lo = std::min<double>(lo, x[i * d + j]);
        hi = std::max<double>(hi, x[i * d + j]);
      }
      offset = lo;
      scale = hi - lo;
    }
    if (scale > 0.0) {
      rec.kept.push_back(j);
      rec.offset.push_back(offset);
      rec.scale.push_back(scale);
    } else {
      rec.dropped.push_back(j);
    }
  }
  if (rec.kept.empty()) throw DataError("normalize: every feature is constant on the fit rows");
  return Normalized{apply_normalization(dataset, rec), rec};
}

Dataset apply_normalization(const Dataset& dataset, const NormalizationRecord& record) {
  if (dataset.features.rank() != 2 || dataset.features.dim(1) != record.input_width) {
    throw DataError("normalization record fitted on width " + std::to_string(record.input_width) +
                    ", dataset has features " + to_string(dataset.features.shape()));
  }
  const std::size_t n = dataset.size(), d = record.input_width, k = record.kept.size();
  const auto x = dataset.features.data();
  std::vector<float> out(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c)
      out[i * k + c] = static_cast<float>((x[i * d + record.kept[c]] - record.offset[c]) / record.scale[c]);
  Dataset result;
  result.name = dataset.name;
  result.features = Tensor(Shape{n, k}, std::move(out));
  result.labels = dataset.labels;
  for (auto j : record.kept) {
    if (j < dataset.feature_names.size()) result.feature_names.push_back(dataset.feature_names[j]);
  }
  result.schema = dataset.schema;
  result.normalization = record;
  return result;
}

Dataset synth_two_gaussian(std::size_t n_typical, std::size_t n_anomalous, std::size_t dim, double separation,
                           std::uint64_t seed) {
  if (n_typical < 1 || n_anomalous < 1 || dim < 1) throw ConfigError("synth_two_gaussian: counts must be >= 1");
  if (!(separation > 0.0)) throw ConfigError("synth_two_gaussian: separation must be > 0");
  Rng rng(seed);
  const std::size_t n = n_typical + n_anomalous;
  std::vector<float> data(n * dim);
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool anomalous = i >= n_typical;
    labels[i] = anomalous ? 1 : 0;
    const double shift = anomalous ? separation : 0.0;
    for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = static_cast<float>(shift + rng.normal());
  }
  Dataset ds;
  ds.name = "synth_two_gaussian";
  ds.features = Tensor(Shape{n, dim}, std::move(data));
  ds.labels = std::move(labels);
  for (std::size_t j = 0; j < dim; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  return ds;
}

}  // namespace ca3
