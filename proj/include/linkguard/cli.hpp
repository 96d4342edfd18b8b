#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace linkguard::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitLinkage = 3,
    kExitBackend = 4,
};

/// Runs one `linkguard` invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace linkguard::cli
