#include "ca3/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ca3/errors.hpp"
#include "ca3/ops.hpp"

namespace ca3 {
namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string f4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("report csv: bad ") + what + " '" + s + "'");
  }
}

// Re-throws `e` with an iteration prefix, keeping the error category.
[[noreturn]] void rethrow_for_iteration(std::size_t i, std::exception_ptr e) {
  const std::string prefix = "experiment iteration " + std::to_string(i) + ": ";
  try {
    std::rethrow_exception(e);
  } catch (const NumericError& err) {
    throw NumericError(prefix + err.what());
  } catch (const ShapeError& err) {
    throw ShapeError(prefix + err.what());
  } catch (const DataError& err) {
    throw DataError(prefix + err.what());
  } catch (const ConfigError& err) {
    throw ConfigError(prefix + err.what());
  } catch (const std::exception& err) {
    throw std::runtime_error(prefix + err.what());
  }
}

struct IterationResult {
  std::uint64_t seed = 0;
  std::vector<double> aucs;  // aligned with spec.modes
};

IterationResult run_iteration(const Dataset& data, const ExperimentSpec& spec, std::size_t iteration) {
  IterationResult r;
  r.seed = spec.base_seed + iteration;

  Dataset working = spec.normal_class ? make_one_vs_all(data, *spec.normal_class) : data;
  if (spec.subset > 0) working = working.subset(stratified_subsample(working, spec.subset, r.seed));
  const SplitDataset split = stratified_split(working, spec.split_ratios, r.seed);
  if (spec.normalization) working = normalize(working, *spec.normalization, split.train).dataset;

  TargetConfig target = spec.target;
  if (target.kind == InputKind::tabular) target.features = working.features.dim(1);
  ModelBundle bundle = ModelBundle::build(target, spec.alarm, r.seed);
  TrainConfig train = spec.train;
  train.seed = r.seed;
  fit(bundle, working, split, train);

  const Tensor x_test = gather_rows(working.features, split.test);
  ScoreSet s;
  for (auto i : split.test) s.labels.push_back(working.labels[i]);
  for (const auto mode : spec.modes) {
    s.scores = score(bundle, x_test, {mode, spec.combined_lambda});
    r.aucs.push_back(roc_auc(s));
  }
  return r;
}

}  // namespace

bool has_both_classes(const ScoreSet& s) {
  bool pos = false, neg = false;
  for (int y : s.labels) (y == 1 ? pos : neg) = true;
  return pos && neg;
}

double roc_auc(const ScoreSet& s) {
  const std::size_t n = s.scores.size();
  if (s.labels.size() != n) {
    throw ShapeError("roc_auc: " + std::to_string(n) + " scores but " + std::to_string(s.labels.size()) + " labels");
  }
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (s.labels[i] != 0 && s.labels[i] != 1) {
      throw DataError("roc_auc: label " + std::to_string(s.labels[i]) + " at index " + std::to_string(i) +
                      " is not 0 or 1");
    }
    if (std::isnan(s.scores[i])) throw NumericError("roc_auc: score at index " + std::to_string(i) + " is NaN");
    n_pos += static_cast<std::size_t>(s.labels[i]);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("roc_auc: needs both classes, got " + std::to_string(n_pos) + " anomalous and " +
                    std::to_string(n_neg) + " typical samples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // Twice the rank sum keeps every quantity an exact integer.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && s.scores[order[hi]] == s.scores[order[lo]]) ++hi;
    const std::uint64_t twice_mean_rank = lo + 1 + hi;  // ranks lo+1 .. hi
    for (std::size_t k = lo; k < hi; ++k) {
      if (s.labels[order[k]] == 1) twice_rank_sum += twice_mean_rank;
    }
    lo = hi;
  }
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ScoreSet baseline_recon_score(const ModelBundle& bundle, const Dataset& data, const std::vector<std::size_t>& rows) {
  ScoreSet s;
  s.scores = score(bundle, gather_rows(data.features, rows), {ScoreMode::recon});
  if (data.has_labels()) {
    for (auto i : rows) s.labels.push_back(data.labels[i]);
  }
  return s;
}

void ExperimentSpec::validate() const {
  if (iterations < 1) throw ConfigError("experiment.iterations must be >= 1");
  if (threads < 1) throw ConfigError("experiment.threads must be >= 1");
  if (modes.empty()) throw ConfigError("experiment.modes must not be empty");
  if (!(combined_lambda >= 0.0)) throw ConfigError("experiment.combined_lambda must be >= 0");
  TargetConfig t = target;
  if (t.kind == InputKind::tabular && t.features == 0) t.features = 1;  // taken from the data
  t.validate();
  alarm.validate();
  train.validate();
}

const ModeSummary& EvalReport::mode(ScoreMode m) const {
  for (const auto& s : modes) {
    if (s.mode == m) return s;
  }
  throw ConfigError(std::string("report has no '") + to_string(m) + "' mode");
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("mean of an empty list");
  double total = 0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double population_std(const std::vector<double>& values) {
  const double m = mean_of(values);
  double sq = 0;
  for (double v : values) sq += (v - m) * (v - m);
  return std::sqrt(sq / static_cast<double>(values.size()));
}

ModeSummary summarize(ScoreMode mode, std::vector<double> aucs) {
  ModeSummary s;
  s.mode = mode;
  s.mean = mean_of(aucs);
  s.std = population_std(aucs);
  s.aucs = std::move(aucs);
  return s;
}

std::string describe_architecture(const TargetConfig& t, const AlarmConfig& a) {
  auto join = [](const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "-" : "") + std::to_string(v[i]);
    return out;
  };
  std::string s = t.kind == InputKind::image ? "image " + std::to_string(t.channels) + "x" + std::to_string(t.height) +
                                                   "x" + std::to_string(t.width)
                                             : "tabular " + std::to_string(t.features) + " soft " +
                                                   std::to_string(t.soft_ordering_width) + "/" +
                                                   std::to_string(t.soft_ordering_k);
  s += " enc " + join(t.encoder_channels) + " k" + std::to_string(t.kernel_size) + " s" + std::to_string(t.stride) +
       " z" + std::to_string(t.latent_dim);
  if (t.variational) s += " vae";
  if (t.tap_decoder) s += " tapdec";
  s += " | alarm " + join(a.conv_channels) + " k" + std::to_string(a.kernel_size) + " dense " + join(a.hidden_dense);
  return s;
}

EvalReport run_experiment(const Dataset& data, const ExperimentSpec& spec) {
  spec.validate();
  if (!data.has_labels()) throw DataError("run_experiment: dataset has no labels");
  if (!spec.normal_class) {
    for (int y : data.labels) {
      if (y != 0 && y != 1) throw DataError("run_experiment: labels must be 0/1 unless a normal class is set");
    }
  }

  std::vector<IterationResult> results(spec.iterations);
  std::vector<std::exception_ptr> errors(spec.iterations);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < spec.iterations;) {
      try {
        results[i] = run_iteration(data, spec, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(spec.threads, spec.iterations);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < spec.iterations; ++i) {
    if (errors[i]) rethrow_for_iteration(i, errors[i]);
  }

  EvalReport report;
  report.dataset = data.name;
  report.normal_class = spec.normal_class;
  report.gamma = spec.train.gamma;
  TargetConfig shown = spec.target;
  if (shown.kind == InputKind::tabular && shown.features == 0) shown.features = data.features.dim(1);
  report.architecture = describe_architecture(shown, spec.alarm);
  for (const auto& r : results) report.seeds.push_back(r.seed);
  for (std::size_t m = 0; m < spec.modes.size(); ++m) {
    std::vector<double> aucs;
    for (const auto& r : results) aucs.push_back(r.aucs[m]);
    report.modes.push_back(summarize(spec.modes[m], std::move(aucs)));
  }
  return report;
}

std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::csv) {
    out = "dataset,normal_class,gamma,mode,iterations,mean,std,seeds,aucs,architecture\n";
    for (const auto& r : reports) {
      std::string seeds;
      for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
      for (const auto& m : r.modes) {
        std::string aucs;
        for (std::size_t i = 0; i < m.aucs.size(); ++i) aucs += (i ? ";" : "") + g17(m.aucs[i]);
        out += sanitize(r.dataset) + "," + (r.normal_class ? std::to_string(*r.normal_class) : "") + "," +
               g17(r.gamma) + "," + to_string(m.mode) + "," + std::to_string(m.aucs.size()) + "," + g17(m.mean) +
               "," + g17(m.std) + "," + seeds + "," + aucs + "," + sanitize(r.architecture) + "\n";
      }
    }
    return out;
  }
  out = "| dataset | normal class | γ | mode | runs | AUC |\n|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    for (const auto& m : r.modes) {
      char gamma[32];
      std::snprintf(gamma, sizeof gamma, "%g", r.gamma);
      out += "| " + r.dataset + " | " + (r.normal_class ? std::to_string(*r.normal_class) : "-") + " | " + gamma +
             " | " + to_string(m.mode) + " | " + std::to_string(m.aucs.size()) + " | " + f4(m.mean) + " ± " +
             f4(m.std) + " |\n";
    }
  }
  return out;
}

std::vector<EvalReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("dataset,normal_class,gamma,mode", 0) != 0) {
    throw DataError("report csv: missing header");
  }
  std::vector<EvalReport> reports;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) {
      throw DataError("report csv line " + std::to_string(line_no) + ": expected 10 fields, got " +
                      std::to_string(f.size()));
    }
    std::optional<int> normal;
    if (!f[1].empty()) normal = static_cast<int>(parse_double(f[1], "normal_class"));
    const double gamma = parse_double(f[2], "gamma");
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split(f[7], ';')) seeds.push_back(std::stoull(s));

    const bool same_group = !reports.empty() && reports.back().dataset == f[0] && reports.back().normal_class == normal &&
                            reports.back().gamma == gamma && reports.back().seeds == seeds &&
                            reports.back().architecture == f[9];
    if (!same_group) {
      EvalReport r;
      r.dataset = f[0];
      r.normal_class = normal;
      r.gamma = gamma;
      r.seeds = seeds;
      r.architecture = f[9];
      reports.push_back(std::move(r));
    }
    ModeSummary m;
    m.mode = parse_score_mode(f[3]);
    for (const auto& a : split(f[8], ';')) m.aucs.push_back(parse_double(a, "auc"));
    m.mean = parse_double(f[5], "mean");
    m.std = parse_double(f[6], "std");
    if (m.aucs.size() != static_cast<std::size_t>(parse_double(f[4], "iterations"))) {
      throw DataError("report csv line " + std::to_string(line_no) + ": iteration count does not match auc list");
    }
    reports.back().modes.push_back(std::move(m));
  }
  return reports;
}

}  // namespace ca3
