#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace osteo::cli {

/// Runs one `osteo` subcommand. Returns 0 on success, otherwise the error
/// family code (2 usage, 3 data, 4 config, 5 numeric) after writing a single
/// line `error:<code>:<kind>:<message>` to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace osteo::cli
