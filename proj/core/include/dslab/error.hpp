#pragma once

#include <stdexcept>
#include <string>

namespace dslab {

// Error taxonomy shared by every module. The kind tells callers (and the
// CLI's exit path) what went wrong without parsing messages.
enum class ErrorKind {
  Dimension,   // tensor shape disagreement
  Config,      // invalid configuration value
  Contract,    // precondition violated by the caller
  Index,       // out-of-range index
  Format,      // malformed file content
  Generation,  // scene generator could not satisfy constraints
  Resource,    // required input missing or insufficient
  Training,    // training diverged
  Io,          // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dslab
