#include "clustertab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace clustertab {

int default_jobs() {
  const char* env = std::getenv("CLUSTERTAB_THREADS");
  if (!env || !*env) return 1;
  try {
    int n = std::stoi(env);
    return n > 0 ? n : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

}  // namespace clustertab
