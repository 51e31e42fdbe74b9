#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace segkit {

// Process exit codes of the segkit command.
enum ExitCode : int {
  kExitOk = 0,
  kExitDataDefects = 1,
  kExitConfigError = 2,
  kExitRuntimeFailure = 3,
};

// Entry point of the `segkit` tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace segkit
