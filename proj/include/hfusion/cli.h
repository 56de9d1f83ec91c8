#pragma once

#include <string>
#include <vector>

namespace hfusion {

// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace hfusion
