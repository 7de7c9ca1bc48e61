#pragma once

#include <string>
#include <vector>

namespace dslu::cli {

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2 };

// Parses and runs one command line (argv[0] included). Never throws.
int run(const std::vector<std::string>& args);

}  // namespace dslu::cli
