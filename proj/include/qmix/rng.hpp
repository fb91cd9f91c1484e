#pragma once

#include <cstdint>
#include <vector>

namespace qmix {

// Counter-based generator: the i-th draw of stream (seed, stream) is a pure
// function of (seed, stream, i), so results do not depend on platform or on
// how draws are interleaved between streams.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next();
  double uniform();                          // [0, 1)
  std::uint64_t below(std::uint64_t bound);  // uniform on [0, bound)
  double normal();
  std::vector<int> permutation(int n);

  CounterRng split(std::uint64_t stream) const;
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace qmix
