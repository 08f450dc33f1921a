#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace proxmmr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs the `proxmmr` command line. `args` excludes the program name.
/// Returns the process exit code; nothing is written to std::cout directly.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace proxmmr::cli
