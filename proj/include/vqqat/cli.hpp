#pragma once

#include <string>
#include <vector>

namespace vqqat::cli {

// Command-line entry point, shared by the binary and in-process tests.
// Commands: train, quantize, eval, gradcheck, report.
// Exit codes: 0 success, 1 gradient-check tolerance failure, 2 invalid
// config or input file, 3 non-finite training abort. Every failure prints a
// single line starting with "error:" to stderr.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace vqqat::cli
