#pragma once

namespace distcal {

// Command line front end; returns the process exit code.
// 0 = success, 2 = validation/config error, 3 = numerical error.
int run_cli(int argc, const char* const* argv);

}  // namespace distcal
