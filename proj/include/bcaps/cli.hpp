#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bcaps::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kUsage = 2,
    kDiverged = 3,
    kCheckpointMismatch = 4,
};

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "BCAPS_OUT_DIR";

/// Runs one command line (argv[0] is the program name) and returns its exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace bcaps::cli
