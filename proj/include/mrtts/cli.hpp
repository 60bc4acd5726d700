#pragma once

#include <string>
#include <vector>

namespace mrtts::cli {

// Runs one CLI invocation (argv without the program name). Exit codes:
// 0 success, 2 usage/validation failure, 3 runtime failure.
int run(const std::vector<std::string>& args);

}  // namespace mrtts::cli
