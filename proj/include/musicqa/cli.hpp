#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace musicqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitService = 3;

// Runs one subcommand (args[0] is the program name). The one-line JSON
// summary goes to `out`; logs and progress go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace musicqa
