#include "voxelinst/parallel.hpp"

#include <cstdlib>
#include <string>

namespace voxelinst {

std::size_t worker_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("VOXELINST_THREADS")) {
    try {
      n = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      n = 0;
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

}  // namespace voxelinst
