#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace loc3d {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

inline Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
inline Vec3 to_vec3(const Index3& i) { return {double(i[0]), double(i[1]), double(i[2])}; }

inline bool finite3(const Vec3& a) {
  return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
}

// FNV-1a; used to derive named RNG streams from the master seed.
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ (v + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2)));
}

// Deterministic RNG. The engine is std::mt19937_64 (its output sequence is
// fixed by the standard); uniform/normal sampling is implemented explicitly
// so draws are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // [0, 1)
  double uniform() { return double(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no cached spare: one value per two draws).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec3 normal3() { return {normal(), normal(), normal()}; }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
  int below(int n) { return int(bits() % std::uint64_t(n)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[i], v[std::size_t(below(i + 1))]);
  }

 private:
  std::mt19937_64 eng_;
};

// Named, index-addressed RNG stream derived from a master seed, e.g.
// rng_stream(seed, "augment", epoch, sample).
inline Rng rng_stream(std::uint64_t master, std::string_view name) {
  return Rng(hash_combine(master, hash_str(name)));
}
inline Rng rng_stream(std::uint64_t master, std::string_view name, std::uint64_t a) {
  return Rng(hash_combine(hash_combine(master, hash_str(name)), a));
}
inline Rng rng_stream(std::uint64_t master, std::string_view name, std::uint64_t a,
                      std::uint64_t b) {
  return Rng(hash_combine(hash_combine(hash_combine(master, hash_str(name)), a), b));
}

[[noreturn]] inline void fail_invalid(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] inline void fail_runtime(const std::string& msg) { throw std::runtime_error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_invalid(msg);
}

}  // namespace loc3d
