#pragma once

#include <stdexcept>
#include <string>

namespace planbound {

// Bad configuration or malformed input: flag values out of range, unparsable
// files, unknown operator codes. Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input parsed but violates a documented requirement of the operation, e.g.
// a calibration set that is too small or an epsilon below the measured shift.
// Maps to CLI exit code 3.
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem trouble: missing paths, unreadable or unwritable files.
// Maps to CLI exit code 4.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ConfigError carrying the 1-based input line where parsing failed.
struct ParseError : ConfigError {
  ParseError(const std::string& what, std::size_t line_no)
      : ConfigError(what + " at line " + std::to_string(line_no)), line(line_no) {}
  std::size_t line;
};

}  // namespace planbound
