#pragma once

#include <ostream>

namespace egflow {

/// Entry point of the egflow command line. Exit codes: 0 success, 2 bad
/// arguments or config, 3 numeric failure, 1 anything else. Arguments are
/// fully parsed and validated before any file is written.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace egflow
