#include "msnn/error.hpp"

namespace msnn {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kUsage:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kBudget:
      return 4;
  }
  return 1;
}

}  // namespace msnn
