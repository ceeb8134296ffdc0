#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace layerslim {

// Process exit codes of the layerslim tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // unexpected internal error
  kExitConfig = 2,   // invalid runfile, flags, inputs or checkpoints
  kExitNumeric = 3,  // training diverged
  kExitGridFailed = 4,
};

// Runs one layerslim invocation; args[0] is the program name. Human-readable
// summaries go to `out`, line-oriented JSON logs to `log`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace layerslim
