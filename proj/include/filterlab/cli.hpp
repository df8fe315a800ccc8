#pragma once

#include <string>
#include <vector>

namespace filterlab {

// Command-line entry point. args excludes the program name. Exit codes:
// 0 success, 1 usage/config error, 2 pipeline failure (missing prerequisite
// artifacts, training/IO errors).
int dispatch(const std::vector<std::string>& args);

}  // namespace filterlab
