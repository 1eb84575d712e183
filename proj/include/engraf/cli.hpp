#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace engraf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (argv[0] is the program name). Never throws: usage
/// errors return 2, runtime failures print a diagnostic to `err` and return 1.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace engraf::cli
