#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace live {

/// Root for timestamped run directories when --out is not given.
inline constexpr const char* kOutputRootEnv = "LIVE_OUTPUT_ROOT";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitAssertion = 3 };

/// Subcommands gen-data, train, eval, stream and bench. `args` excludes the
/// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace live
