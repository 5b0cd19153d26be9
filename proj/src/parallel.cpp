#include "mixdetect/parallel.hpp"

#include <cstdlib>
#include <string>

namespace mixdetect {

std::size_t default_threads() {
  if (const char* env = std::getenv("MIXDETECT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  const auto hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

}  // namespace mixdetect
