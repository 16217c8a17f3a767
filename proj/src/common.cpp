#include "shardann/common.hpp"

#include <cstdlib>

#include <omp.h>

namespace shardann {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SHARDANN_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return omp_get_max_threads();
}

ErrorKind kind_of(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return ErrorKind::io;
  if (dynamic_cast<const FormatError*>(&e)) return ErrorKind::format;
  if (dynamic_cast<const InvalidArgument*>(&e)) return ErrorKind::invalid_argument;
  if (dynamic_cast<const CapacityError*>(&e)) return ErrorKind::capacity;
  if (dynamic_cast<const StarvationError*>(&e)) return ErrorKind::starvation;
  return ErrorKind::internal;
}

}  // namespace shardann
