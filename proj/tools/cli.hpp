#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace swgrid::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// Environment variable consulted when --data-dir is omitted.
inline constexpr const char* kDataDirEnv = "SWGRID_DATA_DIR";

/// Runs the command line `args` (args[0] is the program name). Regular output
/// goes to `out`; failures print one `error: <kind>: <message>` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace swgrid::cli
