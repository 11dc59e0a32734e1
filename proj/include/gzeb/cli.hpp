#pragma once

namespace gzeb {

/// Entry point of the `gzeb` tool. Returns the process exit code: 0 success,
/// 2 configuration or usage error, 3 data or format error, 4 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace gzeb
