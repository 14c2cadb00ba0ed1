#include "snatchml/error.hpp"

namespace snatchml {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParameter: return "parameter error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kIndex: return "index error";
    case ErrorCode::kCoverage: return "coverage error";
    case ErrorCode::kSplit: return "split error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kTraining: return "training error";
    case ErrorCode::kSelection: return "selection error";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kUsage: return "usage error";
  }
  return "error";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParameter:
    case ErrorCode::kConfig:
    case ErrorCode::kIndex:
    case ErrorCode::kSelection:
    case ErrorCode::kUsage:
      return 2;
    case ErrorCode::kFormat:
    case ErrorCode::kShape:
    case ErrorCode::kCoverage:
    case ErrorCode::kSplit:
      return 3;
    case ErrorCode::kNumeric:
    case ErrorCode::kTraining:
      return 4;
    case ErrorCode::kIo:
      return 5;
  }
  return 1;
}

}  // namespace snatchml
