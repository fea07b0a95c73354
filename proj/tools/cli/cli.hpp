#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace segloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags, paths or config values.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Runs one subcommand. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "a,b,c" or a "start:step:stop" range; every value must lie in (0, 1].
std::vector<double> parse_iou_grid(const std::string& text);

}  // namespace segloc::cli
