#pragma once

#include <ostream>

namespace elliptic::cli {

/// Parses arguments and runs a subcommand. Returns 0 on success, 1 on a
/// runtime or numerical error and 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace elliptic::cli
