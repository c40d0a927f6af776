#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace otlex::cli {

/// Runs the command line `args` (without the program name). Diagnostics go to
/// `err`, results to `out`. Returns the process exit code: 0 on success, 1 on
/// a toolkit error, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_file(const std::string& path);

}  // namespace otlex::cli
