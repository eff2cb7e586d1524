#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace i2p {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;
} // namespace exit_code

/// Runs one command. `args` excludes the program name. Diagnostics go to
/// `err`; reports and the closing "wrote:" line go to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, char** argv);

} // namespace i2p
