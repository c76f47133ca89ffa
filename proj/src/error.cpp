#include "error.hpp"

namespace fkb {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Layout: return "layout";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::Cache: return "cache";
    case ErrorKind::Client: return "client";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Config: return "config";
    case ErrorKind::Partition: return "partition";
    case ErrorKind::Format: return "format";
    case ErrorKind::Generation: return "generation";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace fkb
