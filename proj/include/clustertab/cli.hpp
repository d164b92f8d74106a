#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clustertab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `clustertab` binary. Returns the process exit status.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "start:stop:step" into the inclusive grid of thresholds.
std::vector<double> parse_grid(const std::string& spec);

}  // namespace clustertab
