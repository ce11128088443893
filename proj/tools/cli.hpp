#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pag::cli {

enum ExitCode : int {
  kOk = 0,
  kNegativeResult = 1,
  kUsageError = 2,
  kOracleFailure = 3,
};

/// Runs the `pag` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pag::cli
