#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

namespace premixer {

/// Counter-based generator: output k is a bijective hash of (key, k), so a
/// stream is fully determined by its seed, its stream id and the number of
/// values drawn so far.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  double uniform();  // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  double normal();
  std::size_t below(std::size_t n);  // uniform integer in [0, n)

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace premixer
