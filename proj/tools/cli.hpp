#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace marginlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInternal = 3;

/// Entry point shared by the executable and the tests. args[0] is the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace marginlab::cli
