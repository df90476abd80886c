#include "qmr/error.hpp"

namespace qmr {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::validation: return "validation";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::convergence: return "convergence";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::convergence: return 4;
    default: return 3;
  }
}

}  // namespace qmr
