#pragma once

#include <stdexcept>
#include <string>

namespace deepssn {

/// Input rejected by a contract check. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A required file or loaded artifact is absent. The CLI maps this to exit code 3.
class MissingArtifact : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed bytes in one of the binary formats (SSTN / SSNM / SSNI).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace deepssn
