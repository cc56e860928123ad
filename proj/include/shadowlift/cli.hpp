#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace shadowlift {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

// args excludes the program name. Subcommands: gen-data, train-codec,
// train-stage1, train-stage2, infer, eval, variance, cross-eval, visualize.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace shadowlift
