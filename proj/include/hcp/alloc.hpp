#pragma once

namespace hcp {

/// Keeps the short-lived tape buffers (a few hundred KB each, allocated and
/// freed every training step) on the heap instead of round-tripping through
/// mmap. Call once at program start; a no-op off glibc.
void tune_allocator();

}  // namespace hcp
