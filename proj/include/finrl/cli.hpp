#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace finrl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses the command line and runs one pipeline stage. The plan and results
/// go to `out`; diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace finrl
