#pragma once

namespace trikit {

// Entry point for the command-line surface. Exit codes: 0 success,
// 1 domain error, 2 usage error.
int run_command(int argc, const char* const* argv);

}  // namespace trikit
