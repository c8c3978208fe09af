#pragma once

#include <string>
#include <vector>

namespace taperkit {

// Exit codes shared by every subcommand:
//   0 success, 1 usage error, 2 I/O failure, 3 invalid data or config,
//   4 verification mismatch, 5 numeric failure.
inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitVerifyFailed = 4;
inline constexpr int kExitNumeric = 5;

int run_cli(const std::vector<std::string>& args);

}  // namespace taperkit
