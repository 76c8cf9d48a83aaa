#pragma once

namespace vseg::cli {

/// Entry point for the `vesselseg` tool. Returns the process exit code:
/// 0 success, 1 validation/runtime failure, 2 usage error.
int run(int argc, const char* const* argv);

}  // namespace vseg::cli
