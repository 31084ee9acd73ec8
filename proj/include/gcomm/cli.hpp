#pragma once

#include <iosfwd>

namespace gcomm::cli {

// Entry point for the `gcomm` tool.  argv as handed to main(); normal results
// go to `out` (one JSON summary line per command, files land under --out),
// machine-readable error JSON goes to `err`.  Returns the process exit code:
// 0 success, 2 usage/config problems, 1 runtime failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gcomm::cli
