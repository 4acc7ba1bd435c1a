#pragma once

namespace ssni {

// Entry point behind the command-line binary; returns the process exit code
// (0 success, 1 runtime failure, 2 configuration/usage error).
int run_cli(int argc, const char* const* argv);

}  // namespace ssni
