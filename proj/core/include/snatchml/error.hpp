#pragma once

#include <stdexcept>
#include <string>

namespace snatchml {

enum class ErrorCode {
  kParameter,  // invalid argument to an operation
  kConfig,     // inconsistent configuration or missing prerequisite
  kFormat,     // malformed file contents
  kShape,      // vector/matrix dimension mismatch
  kIndex,      // layer or class index out of range
  kCoverage,   // a class lacks enough samples
  kSplit,
  kNumeric,    // NaN / inf encountered
  kTraining,   // divergence during optimization
  kSelection,  // nothing to select from
  kIo,
  kUsage,
};

const char* to_string(ErrorCode code);

// Process exit code for an error: 2 config, 3 data, 4 numeric/training, 5 I/O.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace snatchml
