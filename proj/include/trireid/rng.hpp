#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace trireid {

/// Deterministic random source. All sampling goes through explicit
/// mappings of raw mt19937_64 words so sequences are identical across
/// standard libraries on one machine. Single-owner: parallel consumers
/// must each derive a child generator from the root seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return eng_(); }

  /// Uniform double in [lo, hi) with 53-bit resolution.
  double uniform(double lo = 0.0, double hi = 1.0) {
    double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  /// Uniform integer in [0, n). n must be > 0. Unbiased via rejection.
  int64_t uniform_int(int64_t n) {
    uint64_t nn = static_cast<uint64_t>(n);
    uint64_t rem = (UINT64_MAX % nn + 1) % nn;  // 2^64 mod n
    uint64_t bound = UINT64_MAX - rem;
    uint64_t x = eng_();
    while (x > bound) x = eng_();
    return static_cast<int64_t>(x % nn);
  }

  /// Box-Muller without spare caching (two words per draw).
  double normal(double mu = 0.0, double sd = 1.0) {
    double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sd * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  /// Child generator keyed by (root seed, stream id); independent of the
  /// parent's current position.
  Rng child(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
  }

  /// Uniform permutation of [0, n) with no fixed points (rejection sampling).
  /// n must be >= 2.
  std::vector<int> derangement(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    for (;;) {
      for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
      shuffle(p);
      bool ok = true;
      for (int i = 0; i < n; ++i) {
        if (p[static_cast<size_t>(i)] == i) {
          ok = false;
          break;
        }
      }
      if (ok) return p;
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << seed_ << ' ' << eng_;
    return os.str();
  }

  static Rng deserialize(const std::string& s) {
    std::istringstream is(s);
    uint64_t seed = 0;
    is >> seed;
    Rng r(seed);
    is >> r.eng_;
    return r;
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace trireid
