#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mcdut/core/error.hpp"

namespace mcdut {

// splitmix64, used to derive decorrelated child seeds from (seed, tag) pairs.
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(mix_seed(a) ^ (b + 0x9e3779b97f4a7c15ULL)); }

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

// Deterministic random source. All sampling in the toolkit goes through this
// wrapper; the distributions are implemented here (not via std::*_distribution)
// so that streams are identical across standard libraries and can be
// serialized exactly.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  uint64_t uniform_below(uint64_t n) {
    require(n > 0, ErrorKind::InvalidInput, "uniform_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
    require(lo <= hi, ErrorKind::InvalidInput, "uniform_int: empty range");
    return lo + static_cast<int64_t>(uniform_below(static_cast<uint64_t>(hi - lo) + 1));
  }

  // Uniform real in [lo, hi) with 53 random bits.
  double uniform_real(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  // Box-Muller without cached state, so the stream position is a pure
  // function of the number of calls.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform_real(0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform_real(0.0, 1.0);
    const double u2 = uniform_real(0.0, 1.0);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(uniform_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // `count` distinct values from [0, n), uniform without replacement,
  // in draw order (partial Fisher-Yates).
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t count) {
    require(count >= 0 && count <= n, ErrorKind::InvalidConfig,
            "sample_without_replacement: count exceeds population");
    std::vector<int64_t> pool(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    std::vector<int64_t> out(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
      const int64_t j = i + static_cast<int64_t>(uniform_below(static_cast<uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      out[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    return out;
  }

  Rng derive(uint64_t tag) { return Rng(mix_seed(engine_(), tag)); }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    require(!is.fail(), ErrorKind::IncompatibleCheckpoint, "bad rng state string");
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mcdut
