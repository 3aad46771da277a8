#pragma once

namespace lac {

// Keep large Eigen temporaries on the heap instead of fresh mmap pages for
// every allocation (glibc only; no-op elsewhere). Call once at startup.
void configure_allocator();

}  // namespace lac
