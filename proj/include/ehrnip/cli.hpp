#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ehrnip {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kIo = 2;
inline constexpr int kProvider = 3;
}  // namespace exit_code

/// Entry point of the `ehrnip` tool. `args` excludes the program name.
/// Summary JSON goes to `out`, logs and diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Makes a running `serve` command return. Safe to call from a signal handler.
void request_serve_shutdown() noexcept;

}  // namespace ehrnip
