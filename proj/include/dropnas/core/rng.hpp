#ifndef DROPNAS_CORE_RNG_HPP
#define DROPNAS_CORE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dropnas {

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based deterministic stream keyed by (seed, purpose, step, lane).
// Streams with distinct keys are independent; the same key always replays
// the same sequence, so mask sampling, shuffling and weight init are
// reproducible in isolation from each other.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t step = 0,
            std::uint64_t lane = 0) {
    state_ = mix64(seed ^ 0x8f1bbcdcbfa53e0bull);
    state_ = mix64(state_ ^ fnv1a64(purpose));
    state_ = mix64(state_ ^ (step + 0x2545f4914f6cdd1dull));
    state_ = mix64(state_ ^ (lane + 0x27d4eb2f165667c5ull));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (one draw per call, fully deterministic)
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace dropnas

#endif
