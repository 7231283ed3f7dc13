#pragma once

#include <string>
#include <vector>

namespace pmf {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitData = 3,
    kExitNumerical = 4,
};

/// Runs `pmfnet <subcommand> ...`; args excludes the program name.
/// Errors are reported on stderr and mapped to an ExitCode.
int run_cli(const std::vector<std::string>& args);

} // namespace pmf
