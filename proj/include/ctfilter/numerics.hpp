#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"

namespace ctfilter {

namespace detail {

/* Asymptotic expansion I_nu(z) ~ e^z/sqrt(2 pi z) * sum c_k, used once the
   power series would need too many terms.  mu = 4 nu^2. */
inline double bessel_asymptotic(double z, double mu) {
  double sum = 1.0, c = 1.0;
  for (int k = 1; k <= 30; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -c * (mu - odd * odd) / (8.0 * k * z);
    if (std::abs(next) >= std::abs(c)) break;  // divergent tail reached
    c = next;
    sum += c;
    if (std::abs(c) < 1e-17 * std::abs(sum)) break;
  }
  return std::exp(z) / std::sqrt(2.0 * std::numbers::pi * z) * sum;
}

}  // namespace detail

/* B0(z) = sum_k (z^2/4)^k / (k!)^2, the modified Bessel function of order 0.
   Series terms are summed until they fall below 1e-16 of the partial sum
   (hard cap 500); large arguments switch to the asymptotic form. */
inline double bessel_b0(double z) {
  if (z < 0.0) fail(ErrorCode::DomainError, "bessel argument must be >= 0");
  if (z > 30.0) return detail::bessel_asymptotic(z, 0.0);
  const double w4 = 0.25 * z * z;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 500; ++k) {
    term *= w4 / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

/* Entire-function factor S(w) = sum_k (w/4)^k / (k! (k+1)!) with w = z^2, so
   that B1(z) = (z/2) S(z^2).  Exposed because the telegraph kernels multiply
   B1 by a factor that cancels the sqrt in z = sqrt(h^2 - x^2); evaluating S
   directly removes the removable edge singularity. */
inline double bessel_b1_ratio(double w) {
  if (w < 0.0) fail(ErrorCode::DomainError, "bessel argument must be >= 0");
  if (w > 900.0) {
    const double z = std::sqrt(w);
    return 2.0 * detail::bessel_asymptotic(z, 4.0) / z;
  }
  const double w4 = 0.25 * w;
  double term = 1.0, sum = 1.0;  // t_k = (w/4)^k / (k! (k+1)!), t_0 = 1
  for (int k = 1; k <= 500; ++k) {
    term *= w4 / (static_cast<double>(k) * (k + 1));
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

/* B1(z) = (z/2) sum_k (z^2/4)^k / (k! (k+1)!). */
inline double bessel_b1(double z) {
  if (z < 0.0) fail(ErrorCode::DomainError, "bessel argument must be >= 0");
  if (z > 30.0) return detail::bessel_asymptotic(z, 4.0);
  return 0.5 * z * bessel_b1_ratio(z * z);
}

inline double gaussian_pdf(double x, double s) {
  if (!(s > 0.0)) fail(ErrorCode::DomainError, "std-dev must be positive");
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const double u = x / s;
  return inv_sqrt_2pi / s * std::exp(-0.5 * u * u);
}

/* Composite Simpson weights for an equispaced grid of n >= 2 points; an even
   point count closes the last three intervals with the 3/8 rule. */
inline Vector simpson_weights(std::size_t n, double dx) {
  if (n < 2) fail(ErrorCode::GridTooCoarse, "quadrature needs >= 2 points");
  Vector w(n, 0.0);
  if (n == 2) {
    w[0] = w[1] = 0.5 * dx;
    return w;
  }
  std::size_t simpson_end = n;  // one past the last index of the 1-4-2 part
  if (n % 2 == 0) simpson_end = n - 3;
  if (simpson_end >= 3) {
    w[0] += dx / 3.0;
    w[simpson_end - 1] += dx / 3.0;
    for (std::size_t k = 1; k + 1 < simpson_end; ++k)
      w[k] += (k % 2 == 1 ? 4.0 : 2.0) * dx / 3.0;
  }
  if (n % 2 == 0) {
    const double c = 3.0 * dx / 8.0;
    w[n - 4] += c;
    w[n - 3] += 3.0 * c;
    w[n - 2] += 3.0 * c;
    w[n - 1] += c;
  }
  return w;
}

struct Atom {
  double location = 0.0;
  double weight = 0.0;
};

/* Density tabulated on a strictly increasing grid, with an optional point
   mass riding alongside the absolutely continuous part.  An empty grid with
   an atom represents a pure point mass. */
class GridDensity {
 public:
  GridDensity(Vector xs, Vector values, std::optional<Atom> atom = {})
      : xs_(std::move(xs)), values_(std::move(values)), atom_(atom) {
    if (xs_.size() != values_.size())
      fail(ErrorCode::ShapeError, "grid/value length mismatch");
    if (xs_.empty() && !atom_)
      fail(ErrorCode::ShapeError, "empty density");
    for (std::size_t k = 1; k < xs_.size(); ++k)
      if (!(xs_[k] > xs_[k - 1]))
        fail(ErrorCode::DomainError, "grid must be strictly increasing");
    for (double& v : values_) {
      if (v < 0.0) {
        if (v < -1e-12) fail(ErrorCode::DomainError, "negative density value");
        v = 0.0;
      }
    }
    if (atom_) {
      if (atom_->weight < 0.0 || atom_->weight > 1.0 + 1e-12)
        fail(ErrorCode::DomainError, "atom weight outside [0,1]");
      if (atom_->weight > 1.0) atom_->weight = 1.0;
    }
    if (xs_.size() >= 2) {
      dx_ = (xs_.back() - xs_.front()) / static_cast<double>(xs_.size() - 1);
      equispaced_ = true;
      for (std::size_t k = 1; k < xs_.size(); ++k)
        if (std::abs((xs_[k] - xs_[k - 1]) - dx_) > 1e-9 * dx_) {
          equispaced_ = false;
          break;
        }
    }
  }

  const Vector& xs() const { return xs_; }
  const Vector& values() const { return values_; }
  const std::optional<Atom>& atom() const { return atom_; }
  bool equispaced() const { return equispaced_; }
  double spacing() const { return dx_; }

  /* Quadrature mass of the smooth part (Simpson when equispaced, trapezoid
     otherwise). */
  double smooth_mass() const {
    if (xs_.size() < 2) return 0.0;
    double m = 0.0;
    if (equispaced_) {
      const Vector w = simpson_weights(xs_.size(), dx_);
      for (std::size_t k = 0; k < xs_.size(); ++k) m += w[k] * values_[k];
    } else {
      for (std::size_t k = 1; k < xs_.size(); ++k)
        m += 0.5 * (values_[k] + values_[k - 1]) * (xs_[k] - xs_[k - 1]);
    }
    return m;
  }

  double mass() const { return smooth_mass() + (atom_ ? atom_->weight : 0.0); }

  void scale_values(double c) {
    for (double& v : values_) v *= c;
  }

  /* Smooth-part value by cubic interpolation; zero beyond the grid (densities
     vanish outside their support) and clipped at zero against overshoot.  The
     atom is a point mass and deliberately not part of pointwise evaluation. */
  double interpolate(double x) const;

  GridDensity& set_atom(std::optional<Atom> a) {
    atom_ = a;
    return *this;
  }

 private:
  Vector xs_;
  Vector values_;
  std::optional<Atom> atom_;
  double dx_ = 0.0;
  bool equispaced_ = false;
};

/* Catmull-Rom style cubic: Hermite segments with central-difference slopes
   (one-sided at the ends).  Reproduces linear data exactly.  Queries outside
   the grid are a caller error here; density tables return 0 out there
   instead via GridDensity::interpolate. */
inline double interp_cubic(const Vector& xs, const Vector& ys, double x) {
  const std::size_t n = xs.size();
  if (n < 2 || ys.size() != n)
    fail(ErrorCode::ShapeError, "interpolation table too small");
  if (x < xs.front() || x > xs.back())
    fail(ErrorCode::OutOfRange, "interpolation query outside grid");
  std::size_t i = static_cast<std::size_t>(
      std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  if (i > 0) --i;
  if (i >= n - 1) i = n - 2;
  const double dx = xs[i + 1] - xs[i];
  const double t = (x - xs[i]) / dx;
  const double m0 = (i == 0) ? (ys[1] - ys[0]) / (xs[1] - xs[0])
                             : (ys[i + 1] - ys[i - 1]) / (xs[i + 1] - xs[i - 1]);
  const double m1 = (i + 2 == n)
                        ? (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2])
                        : (ys[i + 2] - ys[i]) / (xs[i + 2] - xs[i]);
  const double t2 = t * t, t3 = t2 * t;
  return (2.0 * t3 - 3.0 * t2 + 1.0) * ys[i] + (t3 - 2.0 * t2 + t) * dx * m0 +
         (-2.0 * t3 + 3.0 * t2) * ys[i + 1] + (t3 - t2) * dx * m1;
}

inline double GridDensity::interpolate(double x) const {
  if (xs_.size() < 2) return 0.0;
  if (x < xs_.front() || x > xs_.back()) return 0.0;
  const double v = interp_cubic(xs_, values_, x);
  return v > 0.0 ? v : 0.0;
}

/* Gaussian-smoothed view of a grid density: evaluates
     (f * phi_s)(z) = sum_k w_k f(x_k) phi_s(z - x_k) + atom.w phi_s(z - x_a)
   with Simpson weights baked in at construction. */
class GaussianSmoothed {
 public:
  GaussianSmoothed(GridDensity f, double s)
      : atom_(f.atom()), s_(s) {
    if (!(s > 0.0)) fail(ErrorCode::DomainError, "std-dev must be positive");
    const std::size_t n = f.xs().size();
    if (n > 0 && n < 5)
      fail(ErrorCode::GridTooCoarse, "convolution grid needs >= 5 points");
    xs_ = f.xs();
    if (n > 0) {
      if (!f.equispaced())
        fail(ErrorCode::DomainError, "convolution grid must be equispaced");
      wv_ = simpson_weights(n, f.spacing());
      for (std::size_t k = 0; k < n; ++k) wv_[k] *= f.values()[k];
    }
    inv_norm_ = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * s_);
    inv_two_s2_ = 1.0 / (2.0 * s_ * s_);
  }

  double stddev() const { return s_; }

  // P(X + s*G <= z) for X ~ the grid density and independent standard G:
  // same quadrature weights applied to the normal CDF instead of the pdf.
  double cdf(double z) const {
    const double q = 1.0 / (s_ * std::numbers::sqrt2);
    auto phi = [q](double d) { return 0.5 * std::erfc(-d * q); };
    double acc = 0.0;
    for (std::size_t k = 0; k < xs_.size(); ++k) acc += wv_[k] * phi(z - xs_[k]);
    if (atom_) acc += atom_->weight * phi(z - atom_->location);
    return std::clamp(acc, 0.0, 1.0);
  }

  double operator()(double z) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < xs_.size(); ++k) {
      const double d = z - xs_[k];
      acc += wv_[k] * std::exp(-d * d * inv_two_s2_);
    }
    if (atom_) {
      const double d = z - atom_->location;
      acc += atom_->weight * std::exp(-d * d * inv_two_s2_);
    }
    return acc * inv_norm_;
  }

 private:
  Vector xs_, wv_;
  std::optional<Atom> atom_;
  double s_ = 1.0, inv_norm_ = 0.0, inv_two_s2_ = 0.0;
};

inline GaussianSmoothed convolve_gaussian(GridDensity f, double s) {
  return GaussianSmoothed(std::move(f), s);
}

}  // namespace ctfilter
