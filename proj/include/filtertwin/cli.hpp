#pragma once

#include <iosfwd>

namespace filtertwin {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Subcommands: simulate, train, predict, evaluate, replay, serve.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace filtertwin
