#pragma once

#include <stdexcept>
#include <string>

namespace taperkit {

// File / stream problems: missing paths, short reads, bad magic bytes.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract violations: bad shapes, invalid configs, out-of-range arguments.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf surfaced by an operation. Never propagated silently.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace taperkit
