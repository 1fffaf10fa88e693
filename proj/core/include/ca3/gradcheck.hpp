#pragma once

// Finite-difference verification of every differentiable op, run in double
// precision on randomized shapes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ca3 {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 20;           // random shape/value draws per op
  std::size_t max_probes = 48;       // perturbed elements per input tensor
  double step = 1e-6;                // central-difference step
  double tolerance = 1e-3;           // on the relative error below
  std::string corrupt_op;            // test hook: scale this op's analytic gradient by 1.5
  std::vector<std::string> only;     // restrict to these ops when non-empty
};

struct GradcheckResult {
  std::string op;
  std::size_t trials = 0;
  // max over trials and inputs of |g_a - g_n| / max(|g_a|, |g_n|, 1e-8),
  // both norms taken over the probed elements.
  double max_rel_error = 0;
  bool passed = false;
};

// Registered op names, each exactly once.
const std::vector<std::string>& differentiable_ops();

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

std::string format_gradcheck_table(const std::vector<GradcheckResult>& results);

}  // namespace ca3
