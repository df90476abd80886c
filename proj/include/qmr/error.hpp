#pragma once

#include <stdexcept>
#include <string>

namespace qmr {

enum class ErrorKind {
  format,       // bad magic, malformed header
  corruption,   // header and payload disagree
  validation,   // non-finite values, invariant violations
  degenerate,   // input carries no usable information (constant image, ...)
  dimension,    // mismatched extents
  config,       // invalid parameters
  io,           // filesystem failure
  convergence,  // optimizer produced a non-finite loss or gave up
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code used by the command line tool for each error kind.
int exit_code_for(ErrorKind kind);

}  // namespace qmr
