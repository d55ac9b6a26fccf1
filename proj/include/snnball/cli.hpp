#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace snnball {

enum ExitCode { kExitOk = 0, kExitValidation = 1, kExitUsage = 2 };

/// gen | train | infer | bench | check. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snnball
