#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stacksim {

/// Exit codes returned by run_cli.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitSolver = 2, kExitInfeasible = 3 };

/// Runs one subcommand. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Resolves a scenario or inputs argument: an existing path is used as is,
/// otherwise <name>.json is looked up in STACKSIM_DATA_DIR and then in the
/// bundled data directory.
std::string resolve_data_path(const std::string& name_or_path);

}  // namespace stacksim
