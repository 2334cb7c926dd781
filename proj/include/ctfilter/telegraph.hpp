#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "ctfilter/ctmc.hpp"
#include "ctfilter/model.hpp"
#include "ctfilter/numerics.hpp"
#include "ctfilter/provider.hpp"

namespace ctfilter {

// Two-state hidden chain with distinct drifts.  State 0 carries drift alpha1
// and leaves at rate lambda1; state 1 carries alpha2 and lambda2.  Splitting
// the drifts into mean a and half-gap b1 turns the integrated drift into an
// affinely scaled telegraph functional, whose closed-form laws live below.
struct TwoStateParams {
  double alpha1, alpha2, lambda1, lambda2, sigma;

  TwoStateParams(double a1, double a2, double l1, double l2, double s)
      : alpha1(a1), alpha2(a2), lambda1(l1), lambda2(l2), sigma(s) {
    if (!(std::isfinite(a1) && std::isfinite(a2)) || a1 == a2)
      fail(ErrorCode::DomainError, "drifts must be finite and distinct");
    if (!(l1 > 0.0) || !(l2 > 0.0) || !std::isfinite(l1) ||
        !std::isfinite(l2))
      fail(ErrorCode::DomainError, "switch intensities must be positive");
    if (!(s > 0.0) || !std::isfinite(s))
      fail(ErrorCode::DomainError, "noise scale must be positive");
  }

  double a() const { return 0.5 * (alpha1 + alpha2); }
  double b1() const { return 0.5 * (alpha1 - alpha2); }
  double b2() const { return -b1(); }
  bool symmetric() const { return lambda1 == lambda2; }

  // Swap the two states; a is unchanged, the half-gap flips sign.
  TwoStateParams relabeled() const {
    return TwoStateParams(alpha2, alpha1, lambda2, lambda1, sigma);
  }

  static TwoStateParams from_model(const ModelSpec& m) {
    if (m.dim() != 2)
      fail(ErrorCode::UnsupportedModel,
           "closed-form densities require a two-state model");
    return TwoStateParams(m.alpha(0), m.alpha(1), m.generator()(0, 1),
                          m.generator()(1, 0), m.sigma());
  }
};

namespace detail {

inline void check_kernel_args(double h, double l1, double l2) {
  if (!(h > 0.0) || !std::isfinite(h))
    fail(ErrorCode::InvalidTime, "kernel needs a positive finite horizon");
  if (!(l1 > 0.0) || !(l2 > 0.0))
    fail(ErrorCode::DomainError, "kernel needs positive switch intensities");
}

// (h - x)(h + x), clipped against rounding at |x| = h.
inline double edge_product(double x, double h) {
  return std::max(0.0, (h - x) * (h + x));
}

}  // namespace detail

// Density kernels on [-h, h] for the standardized telegraph functional
// int_0^h s(u) du where s flips between +1 and -1 at the switch times;
// values outside the support are 0.  The even kernel covers an even number
// of switches (>= 2: the zero-switch outcome is the atom at x = h and is
// carried separately), the odd kernel an odd number.  The edge factor
// ((h+x)/(h-x))^{1/2} B1(l*sqrt(h^2-x^2)) is evaluated through the entire
// series S(w) = sum_k (w/4)^k / (k! (k+1)!) as l*(h+x)/2 * S(l^2 (h^2-x^2)),
// which is identical on (-h, h) and finite at the endpoints.

inline double sym_kernel_even(double x, double h, double lambda) {
  detail::check_kernel_args(h, lambda, lambda);
  if (std::abs(x) > h) return 0.0;
  const double w = detail::edge_product(x, h);
  return 0.25 * lambda * lambda * (h + x) *
         bessel_b1_ratio(lambda * lambda * w);
}

inline double sym_kernel_odd(double x, double h, double lambda) {
  detail::check_kernel_args(h, lambda, lambda);
  if (std::abs(x) > h) return 0.0;
  return 0.5 * lambda * bessel_b0(lambda * std::sqrt(detail::edge_product(x, h)));
}

inline double sym_kernel(double x, double h, double lambda) {
  if (std::abs(x) > h) return sym_kernel_even(x, h, lambda);  // arg checks
  return sym_kernel_even(x, h, lambda) + sym_kernel_odd(x, h, lambda);
}

// Unequal switch rates: rate l1 applies while the functional moves at +1
// (the starting direction), l2 on the flipped stretches.  The exponential
// tilt exp((l1-l2)(h-x)/2) accounts for the unequal exposure times.

inline double asym_kernel_even(double x, double h, double l1, double l2) {
  detail::check_kernel_args(h, l1, l2);
  if (std::abs(x) > h) return 0.0;
  const double w = detail::edge_product(x, h);
  const double tilt = std::exp(0.5 * (l1 - l2) * (h - x));
  return 0.25 * l1 * l2 * (h + x) * tilt * bessel_b1_ratio(l1 * l2 * w);
}

inline double asym_kernel_odd(double x, double h, double l1, double l2) {
  detail::check_kernel_args(h, l1, l2);
  if (std::abs(x) > h) return 0.0;
  const double w = detail::edge_product(x, h);
  const double tilt = std::exp(0.5 * (l1 - l2) * (h - x));
  return 0.5 * tilt * bessel_b0(std::sqrt(l1 * l2 * w));
}

// Full start-conditional kernel: even part + l1 * odd part (the odd kernel
// is normalized without the starting rate, matching its use as the
// switch-conditional mixing density).
inline double asym_kernel(double x, double h, double l1, double l2) {
  if (std::abs(x) > h) return asym_kernel_even(x, h, l1, l2);  // arg checks
  return asym_kernel_even(x, h, l1, l2) +
         l1 * asym_kernel_odd(x, h, l1, l2);
}

// Closed-form two-state transition probabilities
// p01(t) = l1/(l1+l2) * (1 - exp(-(l1+l2) t)), and symmetrically p10.
inline StochasticMatrix two_state_transitions(double l1, double l2, double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    fail(ErrorCode::InvalidTime, "transition time must be nonnegative");
  if (!(l1 > 0.0) || !(l2 > 0.0))
    fail(ErrorCode::DomainError, "switch intensities must be positive");
  const double s = l1 + l2;
  const double f = -std::expm1(-s * t);
  const double p01 = l1 / s * f, p10 = l2 / s * f;
  return StochasticMatrix::validated(
      Matrix{{1.0 - p01, p01}, {p10, 1.0 - p10}});
}

namespace detail {

struct LawPieces {
  double coeff;                       // prefactor on kernel and atom
  double (*kernel)(double, double, double, double);
  bool has_atom;
};

// Overflow-safe prefactors, written with the exp(-l1 h) factor pulled in.
inline LawPieces law_pieces_start(double l1, double l2, double h) {
  (void)l2;
  (void)h;
  return {std::exp(-l1 * h), &asym_kernel, true};
}

inline LawPieces law_pieces_stay(double l1, double l2, double h) {
  // s e^{-l1 h} / (l2 + l1 e^{-s h}) = s / (l2 e^{l1 h} + l1 e^{-l2 h}),
  // written so nothing overflows for large l1 h.
  const double s = l1 + l2;
  return {s * std::exp(-l1 * h) / (l2 + l1 * std::exp(-s * h)),
          &asym_kernel_even, true};
}

inline LawPieces law_pieces_switch(double l1, double l2, double h) {
  const double s = l1 + l2;
  return {s * std::exp(-l1 * h) / -std::expm1(-s * h), &asym_kernel_odd,
          false};
}

// Law of the integrated drift over [0, h] conditioned on the start state
// (and optionally the end state), as a grid density plus the no-switch atom.
// The kernel argument is mapped through x -> (x - a h)/b so the law lives on
// [h(a - |b|), h(a + |b|)] with the atom at alpha_start * h.
inline GridDensity drift_law(const TwoStateParams& p, std::size_t start,
                             const LawPieces& pieces, double h,
                             std::size_t npoints) {
  if (!(h > 0.0) || !std::isfinite(h))
    fail(ErrorCode::InvalidTime, "law horizon must be positive");
  if (npoints < 5) fail(ErrorCode::GridTooCoarse, "law grid needs >= 5 points");
  const TwoStateParams q = (start == 0) ? p : p.relabeled();
  const double a = q.a(), b = q.b1(), ab = std::abs(b);
  const double lo = h * (a - ab), hi = h * (a + ab);
  Vector xs(npoints), vs(npoints);
  for (std::size_t k = 0; k < npoints; ++k) {
    const double x =
        lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(npoints - 1);
    xs[k] = x;
    // The grid endpoints map to exactly +-h analytically; clamp away the
    // rounding that would otherwise push them just outside the support.
    const double u = std::clamp((x - a * h) / b, -h, h);
    vs[k] = pieces.coeff * pieces.kernel(u, h, q.lambda1, q.lambda2) / ab;
  }
  if (pieces.has_atom)
    return GridDensity(std::move(xs), std::move(vs),
                       Atom{q.alpha1 * h, pieces.coeff});
  return GridDensity(std::move(xs), std::move(vs));
}

inline void check_two_state_index(std::size_t i) {
  if (i > 1) fail(ErrorCode::OutOfRange, "state index must be 0 or 1");
}

}  // namespace detail

// Law of J_h = int_0^h alpha_{state} given the start state.
inline GridDensity j_law(const TwoStateParams& p, std::size_t start, double h,
                         std::size_t npoints = 2001) {
  detail::check_two_state_index(start);
  const TwoStateParams q = (start == 0) ? p : p.relabeled();
  return detail::drift_law(p, start,
                           detail::law_pieces_start(q.lambda1, q.lambda2, h),
                           h, npoints);
}

// Law of J_h given start and end states.
inline GridDensity j_law_pair(const TwoStateParams& p, std::size_t start,
                              std::size_t end, double h,
                              std::size_t npoints = 2001) {
  detail::check_two_state_index(start);
  detail::check_two_state_index(end);
  const TwoStateParams q = (start == 0) ? p : p.relabeled();
  const auto pieces = (start == end)
                          ? detail::law_pieces_stay(q.lambda1, q.lambda2, h)
                          : detail::law_pieces_switch(q.lambda1, q.lambda2, h);
  return detail::drift_law(p, start, pieces, h, npoints);
}

// Equal-rate closed forms, kept as an independent code path: prefactors
// exp(-l h), 1/cosh(l h), 1/sinh(l h) with the symmetric kernels.
namespace detail {

inline double require_symmetric(const TwoStateParams& p) {
  if (!p.symmetric())
    fail(ErrorCode::DomainError,
         "equal-rate form needs lambda1 == lambda2");
  return p.lambda1;
}

inline double sym_kernel_dispatch(double x, double h, double l1, double l2) {
  (void)l2;
  return sym_kernel(x, h, l1);
}
inline double sym_even_dispatch(double x, double h, double l1, double l2) {
  (void)l2;
  return sym_kernel_even(x, h, l1);
}
inline double sym_odd_dispatch(double x, double h, double l1, double l2) {
  (void)l2;
  return sym_kernel_odd(x, h, l1);
}

}  // namespace detail

inline GridDensity sym_j_law(const TwoStateParams& p, std::size_t start,
                             double h, std::size_t npoints = 2001) {
  detail::check_two_state_index(start);
  const double l = detail::require_symmetric(p);
  return detail::drift_law(
      p, start, {std::exp(-l * h), &detail::sym_kernel_dispatch, true}, h,
      npoints);
}

inline GridDensity sym_j_law_pair(const TwoStateParams& p, std::size_t start,
                                  std::size_t end, double h,
                                  std::size_t npoints = 2001) {
  detail::check_two_state_index(start);
  detail::check_two_state_index(end);
  const double l = detail::require_symmetric(p);
  if (start == end)
    return detail::drift_law(
        p, start, {1.0 / std::cosh(l * h), &detail::sym_even_dispatch, true},
        h, npoints);
  return detail::drift_law(
      p, start, {1.0 / std::sinh(l * h), &detail::sym_odd_dispatch, false}, h,
      npoints);
}

// One-shot observation-increment densities: the drift law smoothed by the
// Gaussian noise of one observation gap.  Convenience form; the provider
// below caches the smoothed tables per h for repeated evaluation.
inline double density_g_i(const TwoStateParams& p, std::size_t i, double z,
                          double h, std::size_t npoints = 2001) {
  return convolve_gaussian(j_law(p, i, h, npoints),
                           p.sigma * std::sqrt(h))(z);
}

inline double density_g_ij(const TwoStateParams& p, std::size_t i,
                           std::size_t j, double z, double h,
                           std::size_t npoints = 2001) {
  return convolve_gaussian(j_law_pair(p, i, j, h, npoints),
                           p.sigma * std::sqrt(h))(z);
}

// DensityProvider over the closed-form two-state laws.  Smoothed tables are
// built once per distinct h and reused across filter steps.
class ExactProvider final : public DensityProvider {
 public:
  explicit ExactProvider(const ModelSpec& m, std::size_t npoints = 2001)
      : params_(TwoStateParams::from_model(m)), npoints_(npoints) {}
  explicit ExactProvider(const TwoStateParams& p, std::size_t npoints = 2001)
      : params_(p), npoints_(npoints) {}

  std::size_t dim() const override { return 2; }
  std::string name() const override { return "exact"; }

  StochasticMatrix transition(double h) const override {
    if (!(h > 0.0) || !std::isfinite(h))
      fail(ErrorCode::InvalidTime, "observation gap must be positive");
    return two_state_transitions(params_.lambda1, params_.lambda2, h);
  }

  double g_marginal(std::size_t i, double dz, double h) const override {
    detail::check_two_state_index(i);
    return tables(h)->marg[i](dz);
  }

  double g_conditional(std::size_t i, std::size_t j, double dz,
                       double h) const override {
    detail::check_two_state_index(i);
    detail::check_two_state_index(j);
    return tables(h)->cond[2 * i + j](dz);
  }

  const TwoStateParams& params() const { return params_; }

  // Exposed for distribution-level validation (e.g. Kolmogorov tests).
  double cdf_marginal(std::size_t i, double z, double h) const {
    detail::check_two_state_index(i);
    return tables(h)->marg[i].cdf(z);
  }
  double cdf_conditional(std::size_t i, std::size_t j, double z,
                         double h) const {
    detail::check_two_state_index(i);
    detail::check_two_state_index(j);
    return tables(h)->cond[2 * i + j].cdf(z);
  }

 private:
  struct Tables {
    std::vector<GaussianSmoothed> marg, cond;
  };

  std::shared_ptr<const Tables> tables(double h) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(h);
    if (it != cache_.end()) return it->second;
    auto t = std::make_shared<Tables>();
    const double s = params_.sigma * std::sqrt(h);
    for (std::size_t i = 0; i < 2; ++i) {
      t->marg.emplace_back(j_law(params_, i, h, npoints_), s);
      for (std::size_t j = 0; j < 2; ++j)
        t->cond.emplace_back(j_law_pair(params_, i, j, h, npoints_), s);
    }
    cache_.emplace(h, t);
    return t;
  }

  TwoStateParams params_;
  std::size_t npoints_;
  mutable std::mutex mu_;
  mutable std::map<double, std::shared_ptr<const Tables>> cache_;
};

}  // namespace ctfilter
