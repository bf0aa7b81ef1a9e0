#pragma once

namespace flowcast::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure and 2
/// on a usage error.
int run(int argc, const char* const* argv);

}  // namespace flowcast::cli
