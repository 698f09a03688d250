#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rwd::cli {

/// Runs one command. `args` excludes the program name. Returns the process
/// exit code: 0 success, 2 usage, 3 data/format, 4 numeric, 1 anything else.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rwd::cli
