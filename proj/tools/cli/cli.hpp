#pragma once

#include <string>
#include <vector>

namespace rpinn::cli {

// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
// error, 3 numeric failure, 4 file or format error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);  // args without the program name

}  // namespace rpinn::cli
