// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_OP_COUNTER_HPP
#define TREEATTN_OP_COUNTER_HPP

#include <cstdint>

namespace treeattn {

// Scalar operation counts gathered by the forward kernels while a
// CountingScope is alive on the current thread.
struct OpCounts {
  std::uint64_t mul_add = 0;
  std::uint64_t compare = 0;
  std::uint64_t exp = 0;

  std::uint64_t total() const { return mul_add + compare + exp; }
};

namespace detail {
inline thread_local OpCounts* active_counts = nullptr;
}  // namespace detail

inline void count_mul_add(std::uint64_t n) {
  if (detail::active_counts) detail::active_counts->mul_add += n;
}
inline void count_compare(std::uint64_t n) {
  if (detail::active_counts) detail::active_counts->compare += n;
}
inline void count_exp(std::uint64_t n) {
  if (detail::active_counts) detail::active_counts->exp += n;
}

class CountingScope {
 public:
  explicit CountingScope(OpCounts& counts) : previous_(detail::active_counts) {
    detail::active_counts = &counts;
  }
  ~CountingScope() { detail::active_counts = previous_; }
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounts* previous_;
};

}  // namespace treeattn

#endif  // TREEATTN_OP_COUNTER_HPP
