#pragma once

namespace pcrec {

// Entry point for the command-line tool. Returns a process exit code:
// 0 success, 1 usage error, 2 runtime failure, 3 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace pcrec
