#include "run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ca3/errors.hpp"

namespace ca3::cli {
namespace fs = std::filesystem;

namespace {

template <class T>
T field(const Json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type (" + j.at(key).type_name() + ")");
  }
}

void require_file(const std::string& path, const std::string& field_name) {
  if (path.empty()) throw ConfigError(field_name + ": missing");
  if (!fs::is_regular_file(path)) throw ConfigError(field_name + ": file not found: " + path);
}

DatasetSpec dataset_from_json(const Json& j) {
  const std::string p = "dataset";
  require_object(j, p);
  reject_unknown_keys(j, p,
                      {"kind", "name", "path", "label_column", "positive_values", "delimiter", "categorical_columns",
                       "drop_columns", "dedup", "images", "labels", "n_typical", "n_anomalous", "dim", "separation",
                       "synth_seed", "normal_class", "normalization", "subset"});
  DatasetSpec d;
  d.kind = field<std::string>(j, "kind", p, d.kind);
  d.name = field<std::string>(j, "name", p, d.name);
  d.path = field<std::string>(j, "path", p, d.path);
  d.label_column = field<std::string>(j, "label_column", p, d.label_column);
  d.positive_values = field<std::vector<std::string>>(j, "positive_values", p, d.positive_values);
  d.delimiter = field<std::string>(j, "delimiter", p, d.delimiter);
  d.categorical_columns = field<std::vector<std::string>>(j, "categorical_columns", p, {});
  d.drop_columns = field<std::vector<std::string>>(j, "drop_columns", p, {});
  d.dedup = field<bool>(j, "dedup", p, d.dedup);
  d.images = field<std::string>(j, "images", p, d.images);
  d.labels = field<std::string>(j, "labels", p, d.labels);
  d.n_typical = field<std::size_t>(j, "n_typical", p, d.n_typical);
  d.n_anomalous = field<std::size_t>(j, "n_anomalous", p, d.n_anomalous);
  d.dim = field<std::size_t>(j, "dim", p, d.dim);
  d.separation = field<double>(j, "separation", p, d.separation);
  d.synth_seed = field<std::uint64_t>(j, "synth_seed", p, d.synth_seed);
  if (j.contains("normal_class")) {
    const Json& nc = j.at("normal_class");
    if (nc.is_string() && nc.get<std::string>() == "all") {
      d.all_classes = true;
    } else if (nc.is_number_integer()) {
      d.normal_classes = {nc.get<int>()};
    } else if (nc.is_array()) {
      d.normal_classes = field<std::vector<int>>(j, "normal_class", p, {});
    } else if (!nc.is_null()) {
      throw ConfigError("dataset.normal_class: expected an integer, a list of integers or \"all\"");
    }
  }
  d.normalization = field<std::string>(j, "normalization", p, d.normalization);
  d.subset = field<std::size_t>(j, "subset", p, d.subset);
  return d;
}

Json to_json(const DatasetSpec& d) {
  Json j;
  j["kind"] = d.kind;
  j["name"] = d.name;
  if (d.kind == "csv") {
    j["path"] = d.path;
    j["label_column"] = d.label_column;
    j["positive_values"] = d.positive_values;
    j["delimiter"] = d.delimiter;
    j["categorical_columns"] = d.categorical_columns;
    j["drop_columns"] = d.drop_columns;
    j["dedup"] = d.dedup;
  } else if (d.kind == "idx") {
    j["images"] = d.images;
    j["labels"] = d.labels;
  } else {
    j["n_typical"] = d.n_typical;
    j["n_anomalous"] = d.n_anomalous;
    j["dim"] = d.dim;
    j["separation"] = d.separation;
    j["synth_seed"] = d.synth_seed;
  }
  if (d.all_classes) {
    j["normal_class"] = "all";
  } else if (d.normal_classes.size() == 1) {
    j["normal_class"] = d.normal_classes[0];
  } else if (!d.normal_classes.empty()) {
    j["normal_class"] = d.normal_classes;
  }
  j["normalization"] = d.normalization;
  j["subset"] = d.subset;
  return j;
}

ExperimentPlan experiment_from_json(const Json& j) {
  const std::string p = "experiment";
  require_object(j, p);
  reject_unknown_keys(j, p, {"iterations", "gammas", "modes", "combined_lambda", "split", "threads"});
  ExperimentPlan e;
  e.iterations = field<std::size_t>(j, "iterations", p, e.iterations);
  e.gammas = field<std::vector<double>>(j, "gammas", p, e.gammas);
  e.modes = field<std::vector<std::string>>(j, "modes", p, e.modes);
  e.combined_lambda = field<double>(j, "combined_lambda", p, e.combined_lambda);
  e.split = field<std::array<double, 3>>(j, "split", p, e.split);
  e.threads = field<std::size_t>(j, "threads", p, e.threads);
  return e;
}

Json to_json(const ExperimentPlan& e) {
  Json j;
  j["iterations"] = e.iterations;
  j["gammas"] = e.gammas;
  j["modes"] = e.modes;
  j["combined_lambda"] = e.combined_lambda;
  j["split"] = e.split;
  j["threads"] = e.threads;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  const auto& d = dataset;
  if (d.kind == "csv") {
    require_file(resolve_data_path(*this, d.path), "dataset.path");
    if (d.delimiter.size() != 1) throw ConfigError("dataset.delimiter: expected a single character");
  } else if (d.kind == "idx") {
    require_file(resolve_data_path(*this, d.images), "dataset.images");
    require_file(resolve_data_path(*this, d.labels), "dataset.labels");
  } else if (d.kind == "synthetic") {
    if (d.n_typical < 1 || d.n_anomalous < 1 || d.dim < 1) {
      throw ConfigError("dataset: synthetic n_typical, n_anomalous and dim must be >= 1");
    }
  } else {
    throw ConfigError("dataset.kind: expected csv, idx or synthetic, got '" + d.kind + "'");
  }
  if (d.normalization != "none") parse_norm_method(d.normalization);
  if (d.kind == "idx" && target.kind != InputKind::image) throw ConfigError("target.kind: idx data needs an image target");
  if (d.kind != "idx" && target.kind != InputKind::tabular) {
    throw ConfigError("target.kind: " + d.kind + " data needs a tabular target");
  }
  TargetConfig t = target;
  if (t.kind == InputKind::tabular && t.features == 0) t.features = 1;  // width comes from the data
  t.validate();
  alarm.validate();
  train.validate();
  if (experiment.iterations < 1) throw ConfigError("experiment.iterations: must be >= 1");
  if (experiment.gammas.empty()) throw ConfigError("experiment.gammas: must not be empty");
  for (double g : experiment.gammas) {
    if (!(g >= 0)) throw ConfigError("experiment.gammas: values must be >= 0");
  }
  if (experiment.modes.empty()) throw ConfigError("experiment.modes: must not be empty");
  for (const auto& m : experiment.modes) {
    try {
      parse_score_mode(m);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("experiment.modes: ") + e.what());
    }
  }
  if (!(experiment.combined_lambda >= 0)) throw ConfigError("experiment.combined_lambda: must be >= 0");
  if (experiment.threads < 1) throw ConfigError("experiment.threads: must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir: missing");
}

Json to_json(const RunConfig& c) {
  Json j;
  j["dataset"] = to_json(c.dataset);
  j["target"] = ca3::to_json(c.target);
  j["alarm"] = ca3::to_json(c.alarm);
  j["train"] = ca3::to_json(c.train);
  j["experiment"] = to_json(c.experiment);
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  require_object(j, "config");
  reject_unknown_keys(j, "config", {"dataset", "target", "alarm", "train", "experiment", "output_dir"});
  RunConfig c;
  if (!j.contains("dataset")) throw ConfigError("config.dataset: missing");
  c.dataset = dataset_from_json(j.at("dataset"));
  if (j.contains("target")) {
    c.target = target_config_from_json(j.at("target"));
  } else if (c.dataset.kind != "idx") {
    c.target = TargetConfig::tabular(0);
  }
  if (j.contains("alarm")) c.alarm = alarm_config_from_json(j.at("alarm"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("experiment")) c.experiment = experiment_from_json(j.at("experiment"));
  c.output_dir = field<std::string>(j, "output_dir", "config", c.output_dir);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  Json j;
  try {
    j = Json::parse(text.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  c.base_dir = fs::absolute(path).parent_path().string();
  return c;
}

std::string resolve_data_path(const RunConfig& c, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  if (const char* root = std::getenv("CA3_DATA_ROOT"); root != nullptr && *root != '\0') {
    return (fs::path(root) / p).string();
  }
  return (fs::path(c.base_dir) / p).string();
}

LoadedData load_dataset(const RunConfig& c) {
  const auto& d = c.dataset;
  LoadedData out;
  if (d.kind == "csv") {
    CsvOptions opt;
    opt.label_column = d.label_column;
    opt.positive_values = d.positive_values;
    opt.delimiter = d.delimiter.at(0);
    opt.categorical_columns = d.categorical_columns;
    opt.drop_columns = d.drop_columns;
    out.dataset = load_csv(resolve_data_path(c, d.path), opt);
    if (d.dedup) out.dataset = dedup(out.dataset);
    out.schema = out.dataset.schema;
  } else if (d.kind == "idx") {
    out.dataset = load_idx(resolve_data_path(c, d.images), resolve_data_path(c, d.labels));
  } else {
    out.dataset = synth_two_gaussian(d.n_typical, d.n_anomalous, d.dim, d.separation, d.synth_seed);
  }
  if (!d.name.empty()) out.dataset.name = d.name;
  return out;
}

}  // namespace ca3::cli
