#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ca3/gradcheck.hpp"
#include "run_config.hpp"

namespace ca3::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kInvalidInput = 2, kNumericFailure = 3 };

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::vector<double>> gammas;
};

void apply_overrides(RunConfig& c, const Overrides& o);

// Each command validates everything before touching the output directory,
// so a failing run leaves no partial artifacts. Errors propagate as
// exceptions; run_cli maps them to exit codes.
void cmd_train(const RunConfig& c, std::ostream& log);
void cmd_experiment(const RunConfig& c, std::ostream& log);
void cmd_score(const std::string& checkpoint, const std::string& input, const std::string& mode, double lambda,
               std::ostream& out);
bool cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ca3::cli
