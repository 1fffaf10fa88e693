#include "ca3/serialization.hpp"

#include <algorithm>

#include "ca3/errors.hpp"

namespace ca3 {
namespace {

template <class T>
T get(const Json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type (" + j.at(key).type_name() + ")");
  }
}

std::size_t get_size(const Json& j, const char* key, const std::string& path, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::vector<std::size_t> get_sizes(const Json& j, const char* key, const std::string& path,
                                   std::vector<std::size_t> fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(path + "." + key + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0) {
      throw ConfigError(path + "." + key + ": expected an array of non-negative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object, got " + j.type_name());
}

void reject_unknown_keys(const Json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(path + "." + key + ": unknown field");
    }
  }
}

Json to_json(const TargetConfig& c) {
  Json j;
  j["kind"] = c.kind == InputKind::image ? "image" : "tabular";
  if (c.kind == InputKind::image) {
    j["channels"] = c.channels;
    j["height"] = c.height;
    j["width"] = c.width;
  } else {
    j["features"] = c.features;
    j["soft_ordering_width"] = c.soft_ordering_width;
    j["soft_ordering_k"] = c.soft_ordering_k;
  }
  j["encoder_channels"] = c.encoder_channels;
  j["kernel_size"] = c.kernel_size;
  j["stride"] = c.stride;
  j["latent_dim"] = c.latent_dim;
  j["variational"] = c.variational;
  j["kl_weight"] = c.kl_weight;
  j["tap_decoder"] = c.tap_decoder;
  return j;
}

TargetConfig target_config_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown_keys(j, path,
                      {"kind", "channels", "height", "width", "features", "soft_ordering_width", "soft_ordering_k",
                       "encoder_channels", "kernel_size", "stride", "latent_dim", "variational", "kl_weight",
                       "tap_decoder"});
  const auto kind = get<std::string>(j, "kind", path, "image");
  TargetConfig c;
  if (kind == "image") {
    c = TargetConfig::image(get_size(j, "channels", path, 1), get_size(j, "height", path, 28),
                            get_size(j, "width", path, 28));
  } else if (kind == "tabular") {
    c = TargetConfig::tabular(get_size(j, "features", path, 0));
    c.soft_ordering_width = get_size(j, "soft_ordering_width", path, c.soft_ordering_width);
    c.soft_ordering_k = get_size(j, "soft_ordering_k", path, c.soft_ordering_k);
  } else {
    throw ConfigError(path + ".kind: expected 'image' or 'tabular', got '" + kind + "'");
  }
  c.encoder_channels = get_sizes(j, "encoder_channels", path, c.encoder_channels);
  c.kernel_size = get_size(j, "kernel_size", path, c.kernel_size);
  c.stride = get_size(j, "stride", path, c.stride);
  c.latent_dim = get_size(j, "latent_dim", path, c.latent_dim);
  c.variational = get<bool>(j, "variational", path, c.variational);
  c.kl_weight = get<double>(j, "kl_weight", path, c.kl_weight);
  c.tap_decoder = get<bool>(j, "tap_decoder", path, c.tap_decoder);
  return c;
}

Json to_json(const AlarmConfig& c) {
  Json j;
  j["conv_channels"] = c.conv_channels;
  j["kernel_size"] = c.kernel_size;
  j["hidden_dense"] = c.hidden_dense;
  return j;
}

AlarmConfig alarm_config_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown_keys(j, path, {"conv_channels", "kernel_size", "hidden_dense"});
  AlarmConfig c;
  c.conv_channels = get_sizes(j, "conv_channels", path, c.conv_channels);
  c.kernel_size = get_size(j, "kernel_size", path, c.kernel_size);
  c.hidden_dense = get_sizes(j, "hidden_dense", path, c.hidden_dense);
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["gamma"] = c.gamma;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["early_stop_patience"] = c.early_stop_patience;
  j["pos_weight"] = c.pos_weight;
  return j;
}

TrainConfig train_config_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown_keys(j, path,
                      {"gamma", "learning_rate", "batch_size", "epochs", "seed", "early_stop_patience", "pos_weight"});
  TrainConfig c;
  c.gamma = get<double>(j, "gamma", path, c.gamma);
  c.learning_rate = get<double>(j, "learning_rate", path, c.learning_rate);
  c.batch_size = get_size(j, "batch_size", path, c.batch_size);
  c.epochs = get_size(j, "epochs", path, c.epochs);
  c.seed = get_size(j, "seed", path, c.seed);
  c.early_stop_patience = get_size(j, "early_stop_patience", path, c.early_stop_patience);
  c.pos_weight = get<double>(j, "pos_weight", path, c.pos_weight);
  return c;
}

Json to_json(const CsvSchema& s) {
  Json j;
  j["delimiter"] = std::string(1, s.delimiter);
  j["label_column"] = s.label_column;
  j["positive_values"] = s.positive_values;
  Json cols = Json::array();
  for (const auto& c : s.columns) {
    Json col;
    col["name"] = c.name;
    col["categorical"] = c.categorical;
    if (c.categorical) col["levels"] = c.levels;
    cols.push_back(col);
  }
  j["columns"] = cols;
  return j;
}

CsvSchema csv_schema_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  CsvSchema s;
  const auto delim = get<std::string>(j, "delimiter", path, ",");
  if (delim.size() != 1) throw ConfigError(path + ".delimiter: expected a single character");
  s.delimiter = delim[0];
  s.label_column = get<std::string>(j, "label_column", path, "");
  s.positive_values = get<std::vector<std::string>>(j, "positive_values", path, {});
  if (!j.contains("columns") || !j.at("columns").is_array()) throw ConfigError(path + ".columns: expected an array");
  for (const auto& c : j.at("columns")) {
    CsvSchema::Column col;
    col.name = get<std::string>(c, "name", path + ".columns", "");
    col.categorical = get<bool>(c, "categorical", path + ".columns", false);
    col.levels = get<std::vector<std::string>>(c, "levels", path + ".columns", {});
    s.columns.push_back(std::move(col));
  }
  return s;
}

Json to_json(const NormalizationRecord& r) {
  Json j;
  j["method"] = to_string(r.method);
  j["input_width"] = r.input_width;
  j["kept"] = r.kept;
  j["dropped"] = r.dropped;
  j["offset"] = r.offset;
  j["scale"] = r.scale;
  return j;
}

NormalizationRecord normalization_from_json(const Json& j, const std::string& path) {
  require_object(j, path);
  NormalizationRecord r;
  r.method = parse_norm_method(get<std::string>(j, "method", path, "zscore"));
  r.input_width = get_size(j, "input_width", path, 0);
  r.kept = get_sizes(j, "kept", path, {});
  r.dropped = get_sizes(j, "dropped", path, {});
  r.offset = get<std::vector<double>>(j, "offset", path, {});
  r.scale = get<std::vector<double>>(j, "scale", path, {});
  if (r.offset.size() != r.kept.size() || r.scale.size() != r.kept.size()) {
    throw ConfigError(path + ": offset/scale lengths do not match the kept columns");
  }
  return r;
}

Json to_json(const TapInfo& t) {
  Json j;
  j["id"] = t.id;
  j["shape"] = t.shape;
  return j;
}

}  // namespace ca3
