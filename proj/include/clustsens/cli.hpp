#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clustsens::cli {

enum ExitCode : int { kOk = 0, kInvalid = 1, kNotConverged = 2, kIo = 3 };

/// Run the command line in-process. Payload goes to `out`, diagnostics to
/// `err`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same, with args[0] as the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clustsens::cli
