#pragma once

#include <iosfwd>

namespace posefabric::harness {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitAborted = 3;

/// Subcommands: search, train, eval, prune, export, gradcheck, gen-data.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace posefabric::harness
