#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace ctfilter {

/* Deterministic random source: a fixed 64-bit engine with hand-rolled
   transforms, so a given seed reproduces the same stream on every platform
   and standard-library version. */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /* Uniform on the open interval (0, 1). */
  double uniform() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1p-53;
  }

  /* Standard normal via Box-Muller, caching the paired deviate. */
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double th = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /* Index draw proportional to non-negative weights (not necessarily
     normalized). */
  int categorical(const double* w, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += w[i];
    double u = uniform() * total;
    int last = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] <= 0.0) continue;
      last = static_cast<int>(i);
      u -= w[i];
      if (u <= 0.0) return last;
    }
    return last;  // guard against accumulated rounding
  }

  int categorical(const std::vector<double>& w) {
    return categorical(w.data(), w.size());
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ctfilter
