#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "ca3/checkpoint.hpp"
#include "ca3/errors.hpp"

namespace ca3::cli {
namespace fs = std::filesystem;

namespace {

struct Prepared {
  Dataset data;  // one-vs-all, subset and normalization applied
  Dataset full;  // every loaded row, normalized; scored into scores.csv
  SplitDataset split;
  std::optional<NormalizationRecord> norm;
  CsvSchema schema;
  TargetConfig target;
};

CsvSchema numeric_schema(const Dataset& d) {
  CsvSchema s;
  s.label_column = "label";
  s.positive_values = {"1"};
  for (const auto& name : d.feature_names) s.columns.push_back({name, false, {}});
  return s;
}

void check_binary(const Dataset& d) {
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] != 0 && d.labels[i] != 1) {
      throw DataError(d.name + ": label " + std::to_string(d.labels[i]) + " at row " + std::to_string(i) +
                      " is not 0/1; set dataset.normal_class for one-vs-all");
    }
  }
}

TargetConfig fit_target(TargetConfig t, const Dataset& d) {
  if (t.kind == InputKind::tabular) {
    if (t.features == 0) t.features = d.features.dim(1);
  }
  const Shape expected = t.sample_shape();
  const Shape& actual = d.features.shape();
  if (actual.size() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), actual.begin() + 1)) {
    throw ShapeError("target expects samples of shape " + to_string(expected) + ", data has " + to_string(actual));
  }
  return t;
}

Prepared prepare(const RunConfig& c) {
  if (c.dataset.all_classes || c.dataset.normal_classes.size() > 1) {
    throw ConfigError("dataset.normal_class: train takes a single normal class");
  }
  LoadedData loaded = load_dataset(c);
  Prepared p;
  p.schema = loaded.schema ? *loaded.schema : numeric_schema(loaded.dataset);
  p.data = c.dataset.normal_classes.empty() ? loaded.dataset
                                            : make_one_vs_all(loaded.dataset, c.dataset.normal_classes[0]);
  check_binary(p.data);
  if (c.dataset.subset > 0) p.data = p.data.subset(stratified_subsample(p.data, c.dataset.subset, c.train.seed));
  p.split = stratified_split(p.data, c.experiment.split, c.train.seed);
  p.full = loaded.dataset;
  if (c.dataset.normalization != "none") {
    Normalized n = normalize(p.data, parse_norm_method(c.dataset.normalization), p.split.train);
    p.data = std::move(n.dataset);
    p.full = apply_normalization(p.full, n.record);
    p.norm = std::move(n.record);
  }
  p.target = fit_target(c.target, p.data);
  return p;
}

std::string score_lines(const std::vector<float>& scores) {
  std::string out = "index,score\n";
  char buf[64];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, static_cast<double>(scores[i]));
    out += buf;
  }
  return out;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::string slug(std::string s) {
  for (auto& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  }
  return s.empty() ? "dataset" : s;
}

std::string gamma_tag(const std::vector<double>& gammas) {
  std::string tag = "g";
  char buf[32];
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%g", gammas[i]);
    tag += (i ? "-" : "") + std::string(buf);
  }
  return slug(tag);
}

Tensor load_score_input(const LoadedCheckpoint& ckpt, const std::string& input) {
  const TargetConfig& t = ckpt.bundle.target_config();
  Dataset d;
  if (is_idx_images_file(input)) {
    d.features = load_idx_images(input);
  } else {
    if (!ckpt.extras.schema) throw DataError(input + ": checkpoint has no CSV schema for tabular input");
    d = load_csv(input, *ckpt.extras.schema);
  }
  if (ckpt.extras.normalization) d = apply_normalization(d, *ckpt.extras.normalization);
  fit_target(t, d);
  return d.features;
}

}  // namespace

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.out) c.output_dir = *o.out;
  if (o.seed) c.train.seed = *o.seed;
  if (o.threads) c.experiment.threads = *o.threads;
  if (o.gammas) {
    c.experiment.gammas = *o.gammas;
    if (o.gammas->size() == 1) c.train.gamma = o.gammas->front();
  }
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  c.validate();
  Prepared p = prepare(c);
  ModelBundle bundle = ModelBundle::build(p.target, c.alarm, c.train.seed);

  std::string train_log = training_log_header() + "\n";
  const TrainResult result = fit(bundle, p.data, p.split, c.train, [&](const EpochLog& row) {
    const std::string line = training_log_row(row);
    train_log += line + "\n";
    log << line << "\n";
  });

  CheckpointExtras extras;
  extras.schema = p.schema;
  extras.normalization = p.norm;
  extras.info["dataset"] = p.data.name;
  extras.info["seed"] = c.train.seed;
  extras.info["gamma"] = c.train.gamma;
  extras.info["best_epoch"] = result.best_epoch;
  if (!c.dataset.normal_classes.empty()) extras.info["normal_class"] = c.dataset.normal_classes[0];
  const std::string ckpt = serialize_checkpoint(bundle, extras);
  const std::string scores = score_lines(score(bundle, p.full.features, {ScoreMode::alarm}));

  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_file(out / "model.ckpt", ckpt);
  write_file(out / "train_log.csv", train_log);
  write_file(out / "scores.csv", scores);
  write_file(out / "config.json", to_json(c).dump(2) + "\n");
  log << "best epoch " << result.best_epoch << ", wrote " << (out / "model.ckpt").string() << "\n";
}

void cmd_experiment(const RunConfig& c, std::ostream& log) {
  c.validate();
  const LoadedData loaded = load_dataset(c);
  std::vector<std::optional<int>> classes;
  if (c.dataset.all_classes) {
    std::vector<int> seen(loaded.dataset.labels);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    classes.assign(seen.begin(), seen.end());
  } else if (c.dataset.normal_classes.empty()) {
    check_binary(loaded.dataset);
    classes.push_back(std::nullopt);
  } else {
    classes.assign(c.dataset.normal_classes.begin(), c.dataset.normal_classes.end());
  }

  ExperimentSpec spec;
  spec.subset = c.dataset.subset;
  spec.iterations = c.experiment.iterations;
  spec.base_seed = c.train.seed;
  spec.split_ratios = c.experiment.split;
  if (c.dataset.normalization != "none") spec.normalization = parse_norm_method(c.dataset.normalization);
  spec.modes.clear();
  for (const auto& m : c.experiment.modes) spec.modes.push_back(parse_score_mode(m));
  spec.combined_lambda = c.experiment.combined_lambda;
  spec.target = c.target;
  spec.alarm = c.alarm;
  spec.train = c.train;
  spec.threads = c.experiment.threads;
  if (spec.target.kind == InputKind::image) fit_target(spec.target, loaded.dataset);

  std::vector<EvalReport> reports;
  for (const auto& cls : classes) {
    for (double gamma : c.experiment.gammas) {
      spec.normal_class = cls;
      spec.train.gamma = gamma;
      reports.push_back(run_experiment(loaded.dataset, spec));
      const auto& r = reports.back();
      log << r.dataset << (cls ? " class " + std::to_string(*cls) : std::string()) << " gamma " << gamma;
      for (const auto& m : r.modes) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  %s %.4f ± %.4f", to_string(m.mode), m.mean, m.std);
        log << buf;
      }
      log << "\n";
    }
  }

  const std::string stem =
      "report_" + slug(c.dataset.name.empty() ? loaded.dataset.name : c.dataset.name) + "_" + gamma_tag(c.experiment.gammas);
  const fs::path out(c.output_dir);
  fs::create_directories(out);
  write_file(out / (stem + ".csv"), render_report(reports, ReportFormat::csv));
  write_file(out / (stem + ".md"), render_report(reports, ReportFormat::markdown));
  write_file(out / "config.json", to_json(c).dump(2) + "\n");
  log << "wrote " << (out / (stem + ".csv")).string() << "\n";
}

void cmd_score(const std::string& checkpoint, const std::string& input, const std::string& mode, double lambda,
               std::ostream& out) {
  const ScoreSpec spec{parse_score_mode(mode), lambda};
  if (spec.mode == ScoreMode::combined && !(lambda >= 0)) throw ConfigError("--lambda: must be >= 0");
  if (!fs::is_regular_file(input)) throw ConfigError("--input: file not found: " + input);
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const Tensor x = load_score_input(ckpt, input);
  out << score_lines(score(ckpt.bundle, x, spec));
}

bool cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  const auto results = run_gradcheck(options);
  out << format_gradcheck_table(results);
  bool ok = true;
  for (const auto& r : results) {
    if (!r.passed) {
      out << "gradient check failed for op '" << r.op << "'\n";
      ok = false;
    }
  }
  return ok;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ca3: activation-based anomaly detection"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<double> gammas;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "base seed (overrides train.seed)");
    sub->add_option("--threads", threads, "parallel experiment iterations")->check(CLI::PositiveNumber);
    sub->add_option("--gamma", gammas, "classification weight(s); overrides the gamma list");
  };
  auto* train = app.add_subcommand("train", "fit one model and write a checkpoint, training log and scores");
  add_common(train);
  auto* experiment = app.add_subcommand("experiment", "repeated runs per normal class and gamma; writes reports");
  add_common(experiment);

  std::string checkpoint, input, mode = "alarm";
  double lambda = 1.0;
  auto* score_cmd = app.add_subcommand("score", "print per-sample anomaly scores as CSV");
  score_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  score_cmd->add_option("--input", input, "IDX image file or CSV file")->required();
  score_cmd->add_option("--mode", mode, "alarm | recon | combined");
  score_cmd->add_option("--lambda", lambda, "combined-mode weight of the normalized reconstruction error");

  GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad->add_option("--seed", gc.seed, "seed");
  grad->add_option("--trials", gc.trials, "random draws per op");
  grad->add_option("--only", gc.only, "restrict to these ops");
  grad->add_option("--corrupt-op", gc.corrupt_op, "test hook: corrupt this op's analytic gradient")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    app.exit(e, out, msg);
    err << msg.str();
    return kInvalidInput;
  }

  auto with_overrides = [&](CLI::App* sub) {
    RunConfig c = load_run_config(config_path);
    if (sub->count("--out")) ov.out = out_dir;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--threads")) ov.threads = threads;
    if (sub->count("--gamma")) ov.gammas = gammas;
    apply_overrides(c, ov);
    return c;
  };

  try {
    if (train->parsed()) {
      cmd_train(with_overrides(train), out);
    } else if (experiment->parsed()) {
      cmd_experiment(with_overrides(experiment), out);
    } else if (score_cmd->parsed()) {
      cmd_score(checkpoint, input, mode, lambda, out);
    } else if (grad->parsed()) {
      return cmd_gradcheck(gc, out) ? kOk : kNumericFailure;
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace ca3::cli
