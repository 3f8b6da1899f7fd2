#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reid::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one invocation. `args` excludes the program name. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace reid::cli
