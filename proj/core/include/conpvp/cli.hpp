#pragma once

namespace conpvp {

// Entry point behind the conpvp binary. Exit codes: 0 success,
// 1 validation error, 2 runtime abort.
int run_cli(int argc, const char* const* argv);

}  // namespace conpvp
