#pragma once

#include <cstdint>
#include <random>

namespace actkg {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Combines two 64-bit values into a well-mixed key.
inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ull));
}

/// Top 53 bits of a 64-bit word as a double in [0, 1).
inline constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(static_cast<std::int64_t>(bits >> 11)) * 0x1.0p-53;
}

/// Counter-based uniform generator keyed by (seed, tensor id, row). The n-th draw of a
/// stream depends only on the key and n, so rows can be quantized in any order.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t tensor_id, std::uint64_t row) noexcept
      : key_(hash_combine(hash_combine(seed, tensor_id), row)) {}

  /// Draw number `counter` of this stream without advancing it.
  double at(std::uint64_t counter) const noexcept {
    return to_unit(splitmix64(key_ + counter * 0xD1B54A32D192ED03ull));
  }

  double next() noexcept { return at(counter_++); }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Sequential generator for data shuffling and initialization. mt19937_64's output
/// sequence is fixed by the standard; the conversions below avoid the
/// implementation-defined std distributions so results match across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t bits() { return engine_(); }
  double uniform() { return to_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection; n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace actkg
