// Deterministic random substreams.
//
// Every random draw in the library comes from a Stream identified by
// (seed, purpose, trial, index). The 64-bit engine seed is obtained by
// SplitMix64-mixing those four words, so results depend only on the key and
// never on thread scheduling. Engine: Mersenne Twister 19937 (64-bit);
// variates: Boost.Random distributions, whose algorithms are fixed across
// platforms (unlike <random>'s distributions).
#pragma once

#include <cstdint>
#include <string_view>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace werm {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a; used to turn purpose names into stream words.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

class Stream {
 public:
  using engine_type = boost::random::mt19937_64;

  Stream(std::uint64_t seed, std::string_view purpose, std::uint64_t trial = 0,
         std::uint64_t index = 0)
      : engine_(derive(seed, fnv1a(purpose), trial, index)) {}

  static std::uint64_t derive(std::uint64_t seed, std::uint64_t purpose,
                              std::uint64_t trial, std::uint64_t index) noexcept {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ purpose);
    h = splitmix64(h ^ trial);
    h = splitmix64(h ^ index);
    return h;
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  long long integer(long long lo, long long hi) {
    return boost::random::uniform_int_distribution<long long>(lo, hi)(engine_);
  }

  engine_type& engine() noexcept { return engine_; }

 private:
  engine_type engine_;
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  boost::random::uniform_01<double> uniform_;
};

}  // namespace werm
