#pragma once

#include <ostream>

namespace odml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `odml` tool: gen-data, run, eval, drift.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace odml::cli
