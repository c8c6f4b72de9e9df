#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ebmgan {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,   // a check or comparison did not pass
  kExitUsage = 2,     // bad arguments, unreadable or malformed inputs
  kExitDiverged = 3,  // training produced non-finite values
};

/// Runs the `ebmgan` command line. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct OracleCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

/// Sampled Fisher statistics against closed-form Gaussian and grid-EBM values.
std::vector<OracleCheck> run_oracle_checks(std::size_t n_samples, std::uint64_t seed);

}  // namespace ebmgan
