#pragma once

#include <cstdio>

namespace coda::cli {

inline int run(int, char**) {
  std::fprintf(stderr, "coda: not yet wired\n");
  return 2;
}

}  // namespace coda::cli
