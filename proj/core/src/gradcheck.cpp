#include "ca3/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "ca3/errors.hpp"
#include "ca3/ops.hpp"
#include "ca3/random.hpp"

namespace ca3 {
namespace {

using T64 = BasicTensor<double>;
using Tape64 = BasicTape<double>;
using Forward = std::function<T64(Tape64&, const std::vector<T64>&)>;

struct Trial {
  std::vector<T64> inputs;
  std::vector<bool> check;  // which inputs are differentiated
  Forward forward;
};

using Generator = std::function<Trial(Rng&)>;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

T64 random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T64(std::move(shape), std::move(v), true);
}

// Values with |x| >= 0.1 keep kinked activations away from the kink.
T64 away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.5);
  return T64(std::move(shape), std::move(v), true);
}

Trial unary(T64 x, Forward f) { return Trial{{std::move(x)}, {true}, std::move(f)}; }

Shape random_shape(Rng& rng, std::size_t min_rank, std::size_t max_rank, std::size_t max_extent = 4) {
  Shape s(pick(rng, min_rank, max_rank));
  for (auto& d : s) d = pick(rng, 1, max_extent);
  return s;
}

Trial conv_trial(Rng& rng, bool two_d, bool transposed) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 1, 3);
  ops::ConvParams p;
  p.stride = pick(rng, 1, 2);
  p.padding = transposed ? pick(rng, 0, (k - 1) / 2) : pick(rng, 0, 1);
  if (transposed) p.output_padding = pick(rng, 0, p.stride - 1);
  const std::size_t h = two_d ? pick(rng, k, k + 4) : 1;
  const std::size_t w = pick(rng, k, k + 4);
  Shape in = two_d ? Shape{n, cin, h, w} : Shape{n, cin, w};
  Shape wt = transposed ? (two_d ? Shape{cin, cout, k, k} : Shape{cin, cout, k})
                        : (two_d ? Shape{cout, cin, k, k} : Shape{cout, cin, k});
  Trial t{{random_tensor(rng, in), random_tensor(rng, wt), random_tensor(rng, {cout})}, {true, true, true}, {}};
  t.forward = [=](Tape64& tape, const std::vector<T64>& v) {
    if (transposed) {
      return two_d ? ops::conv_transpose2d(tape, v[0], v[1], v[2], p) : ops::conv_transpose1d(tape, v[0], v[1], v[2], p);
    }
    return two_d ? ops::conv2d(tape, v[0], v[1], v[2], p) : ops::conv1d(tape, v[0], v[1], v[2], p);
  };
  return t;
}

Trial pool_trial(Rng& rng, bool max_pool) {
  const bool two_d = rng.uniform() < 0.5;
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3);
  Shape in{n, c};
  std::vector<std::size_t> target;
  for (int a = 0; a < (two_d ? 2 : 1); ++a) {
    const std::size_t len = pick(rng, 1, 7);
    in.push_back(len);
    target.push_back(pick(rng, 1, len));
  }
  return unary(random_tensor(rng, in), [=](Tape64& tape, const std::vector<T64>& v) {
    return max_pool ? ops::adaptive_max_pool(tape, v[0], target) : ops::adaptive_avg_pool(tape, v[0], target);
  });
}

Trial binary(Rng& rng, std::function<T64(Tape64&, const T64&, const T64&)> f) {
  const Shape s = random_shape(rng, 1, 3);
  Trial t{{random_tensor(rng, s), random_tensor(rng, s)}, {true, true}, {}};
  t.forward = [f](Tape64& tape, const std::vector<T64>& v) { return f(tape, v[0], v[1]); };
  return t;
}

const std::vector<std::pair<std::string, Generator>>& registry() {
  static const std::vector<std::pair<std::string, Generator>> cases = {
      {"conv2d", [](Rng& r) { return conv_trial(r, true, false); }},
      {"conv1d", [](Rng& r) { return conv_trial(r, false, false); }},
      {"conv_transpose2d", [](Rng& r) { return conv_trial(r, true, true); }},
      {"conv_transpose1d", [](Rng& r) { return conv_trial(r, false, true); }},
      {"linear",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), d = pick(r, 1, 6), m = pick(r, 1, 6);
         Trial t{{random_tensor(r, {n, d}), random_tensor(r, {d, m}), random_tensor(r, {m})}, {true, true, true}, {}};
         t.forward = [](Tape64& tape, const std::vector<T64>& v) { return ops::linear(tape, v[0], v[1], v[2]); };
         return t;
       }},
      {"elu",
       [](Rng& r) {
         return unary(away_from_zero(r, random_shape(r, 1, 3)),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::elu(tape, v[0]); });
       }},
      {"sigmoid",
       [](Rng& r) {
         return unary(random_tensor(r, random_shape(r, 1, 3), -3, 3),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::sigmoid(tape, v[0]); });
       }},
      {"relu",
       [](Rng& r) {
         return unary(away_from_zero(r, random_shape(r, 1, 3)),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::relu(tape, v[0]); });
       }},
      {"exp",
       [](Rng& r) {
         return unary(random_tensor(r, random_shape(r, 1, 3), -2, 2),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::exp(tape, v[0]); });
       }},
      {"adaptive_avg_pool", [](Rng& r) { return pool_trial(r, false); }},
      {"adaptive_max_pool", [](Rng& r) { return pool_trial(r, true); }},
      {"concat_channels",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 2), len = pick(r, 1, 5), parts = pick(r, 1, 3);
         Trial t;
         for (std::size_t i = 0; i < parts; ++i) {
           t.inputs.push_back(random_tensor(r, {n, pick(r, 1, 3), len}));
           t.check.push_back(true);
         }
         t.forward = [](Tape64& tape, const std::vector<T64>& v) { return ops::concat_channels(tape, v); };
         return t;
       }},
      {"slice_channels",
       [](Rng& r) {
         const std::size_t c = pick(r, 1, 5);
         const std::size_t b = pick(r, 0, c - 1), e = pick(r, b + 1, c);
         return unary(random_tensor(r, {pick(r, 1, 2), c, pick(r, 1, 4)}),
                      [=](Tape64& tape, const std::vector<T64>& v) { return ops::slice_channels(tape, v[0], b, e); });
       }},
      {"reshape",
       [](Rng& r) {
         const std::size_t a = pick(r, 1, 4), b = pick(r, 1, 4), c = pick(r, 1, 3);
         return unary(random_tensor(r, {a, b * c}),
                      [=](Tape64& tape, const std::vector<T64>& v) { return ops::reshape(tape, v[0], {a * b, c}); });
       }},
      {"flatten",
       [](Rng& r) {
         return unary(random_tensor(r, random_shape(r, 2, 4)),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::flatten(tape, v[0]); });
       }},
      {"split_stack",
       [](Rng& r) {
         const std::size_t k = pick(r, 1, 4), w = pick(r, 1, 4);
         return unary(random_tensor(r, {pick(r, 1, 3), k * w}),
                      [=](Tape64& tape, const std::vector<T64>& v) { return ops::split_stack(tape, v[0], k); });
       }},
      {"add", [](Rng& r) { return binary(r, [](Tape64& t, const T64& a, const T64& b) { return ops::add(t, a, b); }); }},
      {"sub", [](Rng& r) { return binary(r, [](Tape64& t, const T64& a, const T64& b) { return ops::sub(t, a, b); }); }},
      {"mul", [](Rng& r) { return binary(r, [](Tape64& t, const T64& a, const T64& b) { return ops::mul(t, a, b); }); }},
      {"scale",
       [](Rng& r) {
         const double f = r.uniform(-2, 2);
         return unary(random_tensor(r, random_shape(r, 1, 3)),
                      [=](Tape64& tape, const std::vector<T64>& v) { return ops::scale(tape, v[0], f); });
       }},
      {"sum",
       [](Rng& r) {
         return unary(random_tensor(r, random_shape(r, 1, 3)),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::sum(tape, v[0]); });
       }},
      {"mean",
       [](Rng& r) {
         return unary(random_tensor(r, random_shape(r, 1, 3)),
                      [](Tape64& tape, const std::vector<T64>& v) { return ops::mean(tape, v[0]); });
       }},
      {"mse", [](Rng& r) { return binary(r, [](Tape64& t, const T64& a, const T64& b) { return ops::mse(t, a, b); }); }},
      {"per_sample_mse",
       [](Rng& r) {
         return binary(r, [](Tape64& t, const T64& a, const T64& b) { return ops::per_sample_mse(t, a, b); });
       }},
      {"bce",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 8);
         std::vector<double> y(n);
         for (auto& v : y) v = r.uniform() < 0.5 ? 0.0 : 1.0;
         const double pos_weight = r.uniform(0.5, 3.0);
         Trial t{{T64(Shape{n}, std::move(y)), random_tensor(r, {n}, 0.05, 0.95)}, {false, true}, {}};
         t.forward = [=](Tape64& tape, const std::vector<T64>& v) { return ops::bce(tape, v[0], v[1], pos_weight); };
         return t;
       }},
  };
  return cases;
}

// Scalar objective sum(out * w) with fixed random weights w.
double objective(const Trial& t, const T64& weights) {
  Tape64 tape(Tape64::Mode::inference);
  const T64 out = t.forward(tape, t.inputs);
  double total = 0;
  for (std::size_t i = 0; i < out.size(); ++i) total += out[i] * weights[i];
  return total;
}

double check_trial(Trial& trial, Rng& rng, const GradcheckOptions& opt, bool corrupt) {
  T64 weights;
  {
    Tape64 probe(Tape64::Mode::inference);
    const T64 out = trial.forward(probe, trial.inputs);
    weights = random_tensor(rng, out.shape());
  }
  for (std::size_t i = 0; i < trial.inputs.size(); ++i) {
    if (!trial.check[i]) trial.inputs[i] = trial.inputs[i].detach();
  }
  Tape64 tape;
  const T64 out = trial.forward(tape, trial.inputs);
  const T64 loss = ops::sum(tape, ops::mul(tape, out, weights.detach()));
  tape.backward(loss);

  double worst = 0;
  for (std::size_t i = 0; i < trial.inputs.size(); ++i) {
    if (!trial.check[i]) continue;
    T64 x = trial.inputs[i];
    std::vector<std::size_t> probes(x.size());
    for (std::size_t j = 0; j < probes.size(); ++j) probes[j] = j;
    if (probes.size() > opt.max_probes) {
      rng.shuffle(probes);
      probes.resize(opt.max_probes);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (auto j : probes) {
      const double original = x[j];
      x.mutable_data()[j] = original + opt.step;
      const double up = objective(trial, weights);
      x.mutable_data()[j] = original - opt.step;
      const double down = objective(trial, weights);
      x.mutable_data()[j] = original;
      const double numeric = (up - down) / (2 * opt.step);
      double analytic = x.has_grad() ? x.grad()[j] : 0.0;
      if (corrupt) analytic *= 1.5;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, gen] : registry()) v.push_back(name);
    return v;
  }();
  return names;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  if (options.trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
  for (const auto& name : options.only) {
    const auto& ops = differentiable_ops();
    if (std::find(ops.begin(), ops.end(), name) == ops.end()) throw ConfigError("gradcheck: unknown op '" + name + "'");
  }
  std::vector<GradcheckResult> results;
  std::uint64_t op_index = 0;
  for (const auto& [name, generate] : registry()) {
    ++op_index;
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
      continue;
    }
    GradcheckResult r;
    r.op = name;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      Rng rng(options.seed * 1000003ULL + op_index * 7919ULL + trial);
      Trial t = generate(rng);
      r.max_rel_error = std::max(r.max_rel_error, check_trial(t, rng, options, name == options.corrupt_op));
      ++r.trials;
    }
    r.passed = r.max_rel_error < options.tolerance;
    results.push_back(r);
  }
  return results;
}

std::string format_gradcheck_table(const std::vector<GradcheckResult>& results) {
  std::string out = "op                  trials  max_rel_error  status\n";
  char line[128];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-19s %6zu  %13.3e  %s\n", r.op.c_str(), r.trials, r.max_rel_error,
                  r.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace ca3
