#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace redge {

/// Every tape step allocates and frees many matrices of the same sizes.
/// glibc hands large blocks straight back to the kernel, which doubles the
/// runtime of long optimisation loops, so keep them in the heap instead.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
}

}  // namespace redge
