#pragma once

namespace sprobe {

// Keeps large activation buffers on the heap instead of mmap/munmap cycles
// (glibc only; a no-op elsewhere). Call once at program start.
void tune_allocator();

}  // namespace sprobe
