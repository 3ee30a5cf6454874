#pragma once

#include <stdexcept>
#include <string>

namespace unetmer {

// Bad input or inconsistent configuration; CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure; CLI maps this to exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; CLI maps this to exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

inline void check_io(bool cond, const std::string& msg) {
  if (!cond) throw IoError(msg);
}

}  // namespace unetmer

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace unetmer {

// Training allocates and frees large activation buffers every step; keeping
// big blocks on the heap instead of returning pages to the kernel roughly
// halves step time. Call once per process before heavy work.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace unetmer
