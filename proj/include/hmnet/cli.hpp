#pragma once

// Command-line front end: convert, pretrain, finetune, summarize, evaluate,
// oracle, gradcheck and grid.

#include <string>
#include <vector>

namespace hmnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// args[0] is the program name. Returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace hmnet::cli
