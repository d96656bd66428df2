#pragma once

#include <ostream>

namespace phasedeploy::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // unexpected error, or reproduce-paper-stats found a mismatch
  kValidation = 2,  // bad flags, manifest, or input files
  kProtocol = 3,    // held-out or locked-set breach
  kDivergence = 4,
};

// Entry point of the `phasedeploy` tool. Never throws; errors go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace phasedeploy::cli
