#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ascl::cli {

// Exit codes: 0 ok, 1 failed check or unexpected error, 2 usage/config/file
// problem, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace ascl::cli
