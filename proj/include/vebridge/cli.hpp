#pragma once

#include <string>
#include <vector>

namespace vebridge {

//! Dispatch a command line (excluding argv[0]). Returns the process exit
//! code: 0 success, 1 input/validation error, 2 estimation error. Errors
//! also emit one machine-readable JSON line on stderr.
int run_command(const std::vector<std::string>& args);

}  // namespace vebridge
