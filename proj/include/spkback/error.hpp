#pragma once

#include <stdexcept>
#include <string>

namespace spkback {

/// Input violates a contract of the operation (bad value, missing id, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// File could not be opened, read or written, or its bytes are malformed.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spkback
