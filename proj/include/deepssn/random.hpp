#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

namespace deepssn {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/// Counter-based generator: the stream is a pure function of the key, so
/// draws for one (seed, scene, variant, object) tuple never depend on how
/// many draws other tuples consumed. Satisfies UniformRandomBitGenerator.
class KeyedRng {
public:
  using result_type = std::uint64_t;

  explicit constexpr KeyedRng(std::uint64_t key) : key_(splitmix64(key)) {}

  template <class... Parts>
  static KeyedRng from(std::uint64_t seed, Parts... parts) {
    std::uint64_t k = splitmix64(seed);
    ((k = hash_combine(k, to_u64(parts))), ...);
    return KeyedRng(k);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() { return splitmix64(key_ ^ (0xd1b54a32d192ed03ULL * ++counter_)); }

  /// Uniform double in [0, 1), 53 random bits.
  constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection; n > 0.
  constexpr std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return x % n;
  }

  constexpr bool bernoulli(double p) { return uniform() < p; }

private:
  static std::uint64_t to_u64(std::string_view s) { return fnv1a64(s); }
  static std::uint64_t to_u64(const char* s) { return fnv1a64(s); }
  static std::uint64_t to_u64(const std::string& s) { return fnv1a64(s); }
  template <class I>
  static constexpr std::uint64_t to_u64(I v) { return static_cast<std::uint64_t>(v); }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace deepssn
