#pragma once

#include <string>
#include <vector>

namespace xclr {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv);

/// Convenience for tests: argv[0] is supplied.
int run_cli(const std::vector<std::string>& args);

}  // namespace xclr
