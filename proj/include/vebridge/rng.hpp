#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vebridge {

//! splitmix64 mixing step, used to derive independent seeds from a master
//! seed plus stream/counter tags (parallel and serial runs agree bitwise).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t counter = 0) {
  std::uint64_t h = splitmix64(master ^ 0x5bf03635d0c3d4e5ULL);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ counter);
  return h;
}

// stream tags for the fixed consumers of randomness
namespace rngstream {
constexpr std::uint64_t kFolds = 1;
constexpr std::uint64_t kDgp = 2;
constexpr std::uint64_t kNcc = 3;
constexpr std::uint64_t kReplication = 4;
constexpr std::uint64_t kTest = 99;
}  // namespace rngstream

//! mt19937_64 engine with hand-rolled transforms so draws are identical
//! across standard libraries (std::normal_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  //! Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  //! Uniform on (0, 1]; safe to pass to log().
  double uniform_pos() { return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53; }

  //! Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    have_spare_ = true;
    return rad * std::cos(ang);
  }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  //! Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  //! Fisher-Yates shuffle (std::shuffle is not portable across platforms).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  //! Sample k indices without replacement from {0,...,n-1}, ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // partial Fisher-Yates: choose k entries into the front of the pool
  for (std::size_t i = 0; i < k && i < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k < n ? k : n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace vebridge
