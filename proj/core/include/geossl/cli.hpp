#pragma once

#include <string>
#include <vector>

namespace geossl::cli {

/// Entry point behind the `geossl` binary. Exit codes: 0 success, 2 bad
/// arguments, 3 config-file validation failure, 1 runtime failure.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace geossl::cli
