#pragma once

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace unerf {

/// Keeps glibc from returning the per-step activation buffers to the OS.
/// Training allocates and frees the same few large blocks every step; with
/// the default thresholds each one is a fresh mmap, which costs about a
/// quarter of the step time. No-op elsewhere.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace unerf
