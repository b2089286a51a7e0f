#pragma once

// Live-value accounting. Every multivector coefficient slot is counted while it
// exists; the peak is what the memory-parity checks compare.

#include <cstddef>
#include <cstdint>

namespace admkit::memory {

struct Counters {
  int64_t live = 0;
  int64_t peak = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

inline int64_t live() { return counters().live; }
inline int64_t peak() { return counters().peak; }
inline void reset_peak() { counters().peak = counters().live; }

inline void acquire(std::size_t n) {
  auto& c = counters();
  c.live += static_cast<int64_t>(n);
  if (c.live > c.peak) c.peak = c.live;
}
inline void release(std::size_t n) { counters().live -= static_cast<int64_t>(n); }

// Peak live values observed while fn runs, relative to the count at entry.
template <class F>
int64_t measure_peak(F&& fn) {
  const int64_t saved_peak = counters().peak;
  const int64_t base = counters().live;
  counters().peak = base;
  fn();
  const int64_t observed = counters().peak - base;
  if (saved_peak > counters().peak) counters().peak = saved_peak;
  return observed;
}

}  // namespace admkit::memory
