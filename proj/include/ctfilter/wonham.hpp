#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "ctfilter/ctmc.hpp"
#include "ctfilter/error.hpp"
#include "ctfilter/filter.hpp"
#include "ctfilter/linalg.hpp"
#include "ctfilter/model.hpp"
#include "ctfilter/sim.hpp"

namespace ctfilter {

/* Diagonal observation-coupling matrix D with entries alpha_i / sigma^2. */
struct DriftMatrix {
  Vector diag;

  static DriftMatrix from_model(const ModelSpec& m) {
    Vector d(m.dim());
    const double s2 = m.sigma() * m.sigma();
    for (std::size_t i = 0; i < m.dim(); ++i) d[i] = m.alpha(i) / s2;
    return DriftMatrix{std::move(d)};
  }

  std::size_t dim() const { return diag.size(); }
};

/* Unnormalized conditional density xi of the Zakai recursion, plus a flag
   recording whether positivity smoothing had to discard the whole vector. */
struct UnnormalizedState {
  Vector xi;
  bool reset = false;
};

namespace detail {

/* The Zakai generator acts on column densities, so the transposed intensity
   matrix drives all approximations here: d/dt p(t) = Q^T p(t). */
inline Matrix zakai_generator(const ModelSpec& m) {
  return transpose(m.generator().matrix());
}

/* (A - D^2/2) t + D z with the largest diagonal entry shifted to zero; the
   shift multiplies e^M by a scalar, which normalization cancels, and keeps
   the exponential away from overflow for large cumulative observations. */
inline Matrix zakai_exponent(const Matrix& a, const DriftMatrix& drift,
                             double t, double z) {
  const std::size_t d = a.rows();
  Matrix m(d, d, 0.0);
  double top = -1e300;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = a(i, j) * t;
    m(i, i) += -0.5 * drift.diag[i] * drift.diag[i] * t + drift.diag[i] * z;
    top = std::max(top, m(i, i));
  }
  for (std::size_t i = 0; i < d; ++i) m(i, i) -= top;
  return m;
}

/* Applies xi <- e^{(A - D^2/2) h + D dz} xi by scaled Taylor summation.
   Only the diagonal of the exponent depends on dz, so each step refreshes d
   entries and runs a handful of matrix-vector products with no allocation:
   the evaluation stays far cheaper than one tabulated-density Bayes update. */
class QuasiStepper {
 public:
  QuasiStepper(const Matrix& a, const DriftMatrix& drift, double h)
      : m_(a.rows(), a.rows(), 0.0),
        diag0_(a.rows()),
        dvec_(drift.diag),
        term_(a.rows()),
        tmp_(a.rows()) {
    const std::size_t d = a.rows();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) m_(i, j) = a(i, j) * h;
      diag0_[i] = a(i, i) * h - 0.5 * drift.diag[i] * drift.diag[i] * h;
      dvec_[i] = drift.diag[i];
    }
  }

  void apply(Vector& v, double dz) {
    const std::size_t d = v.size();
    double top = -1e300;
    for (std::size_t i = 0; i < d; ++i) {
      m_(i, i) = diag0_[i] + dvec_[i] * dz;
      top = std::max(top, m_(i, i));
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        col += (i == j) ? std::abs(m_(j, j) - top) : std::abs(m_(i, j));
      norm = std::max(norm, col);
    }
    for (std::size_t i = 0; i < d; ++i) m_(i, i) -= top;

    // Degree <= 48 Taylor stays backward stable up to norm ~2 once the
    // diagonal shift above has removed the dominant scale, so only halve
    // beyond that; the common step then runs a single pass.
    int squarings = 0;
    while (norm > 2.0) {
      norm *= 0.5;
      if (++squarings > 30)
        fail(ErrorCode::SolverInstability, "exponent norm too large");
    }
    const double factor = std::ldexp(1.0, -squarings);
    const int reps = 1 << squarings;
    for (int rep = 0; rep < reps; ++rep) {
      term_ = v;
      for (int k = 1; k <= 48; ++k) {
        const double f = factor / static_cast<double>(k);
        for (std::size_t i = 0; i < d; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += m_(i, j) * term_[j];
          tmp_[i] = acc * f;
        }
        std::swap(term_, tmp_);
        double tnorm = 0.0, vnorm = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          v[i] += term_[i];
          tnorm += std::abs(term_[i]);
          vnorm += std::abs(v[i]);
        }
        if (tnorm <= 1e-18 * vnorm) break;
      }
    }
  }

 private:
  Matrix m_;
  Vector diag0_, dvec_, term_, tmp_;
};

inline Distribution normalize_or_reset(Vector xi, const ModelSpec& model,
                                       double t, bool* flagged) {
  double total = 0.0;
  bool bad = false;
  for (double& x : xi) {
    if (!std::isfinite(x)) bad = true;
    if (x < 0.0) x = 0.0;  // rounding dust; e^M is entrywise nonnegative
    total += x;
  }
  if (bad || !(total > 0.0)) {
    if (flagged) *flagged = true;
    return marginal(model.generator(), model.initial(), t);
  }
  if (flagged) *flagged = false;
  return Distribution::renormalized(std::move(xi));
}

}  // namespace detail

/* Closed-form unnormalized solution exp((A - D^2/2) t + D Z_t) p0 of the
   Zakai equation, normalized for reporting.  Exact when A and D commute;
   otherwise the non-commuting product is the quasi-exact approximation. */
inline Distribution quasi_exact(const ModelSpec& model, const Distribution& p0,
                                double t, double zt) {
  if (p0.size() != model.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  if (!(t >= 0.0) || !std::isfinite(t))
    fail(ErrorCode::InvalidTime, "time must be nonnegative");
  if (!std::isfinite(zt))
    fail(ErrorCode::DomainError, "cumulative observation must be finite");
  const Matrix a = detail::zakai_generator(model);
  const DriftMatrix drift = DriftMatrix::from_model(model);
  const Matrix m = detail::zakai_exponent(a, drift, t, zt);
  Vector xi = matvec(expm(m), p0.vec());
  return detail::normalize_or_reset(std::move(xi), model, t, nullptr);
}

enum class QuasiMode { Stepwise, OneShot };

/* Quasi-exact filtering over a series.  Stepwise composes one exponential
   factor per increment (the filter-recursion use pattern); OneShot applies
   the printed formula with cumulative time and observation at every report
   point.  The two agree when A and D commute. */
inline FilterTrajectory quasi_filter(const ObservationSeries& obs,
                                     const ModelSpec& model,
                                     const Distribution& p0,
                                     QuasiMode mode = QuasiMode::Stepwise) {
  if (p0.size() != model.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  const std::size_t n = obs.size();
  FilterTrajectory traj;
  traj.states.reserve(n + 1);
  traj.step_seconds.reserve(n);
  traj.states.push_back(FilterState{0, 0.0, p0, 1.0, false});
  if (n == 0) return traj;
  if (!(obs.h > 0.0) || !std::isfinite(obs.h))
    fail(ErrorCode::InvalidTime, "observation gap must be positive");

  const Matrix a = detail::zakai_generator(model);
  const DriftMatrix drift = DriftMatrix::from_model(model);
  detail::QuasiStepper stepper(a, drift, obs.h);

  Vector mu = p0.vec();
  double cumulative = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double dz = obs.increments[k - 1];
    if (!std::isfinite(dz))
      fail(ErrorCode::DomainError, "observation increment must be finite");
    cumulative += dz;
    const double t = static_cast<double>(k) * obs.h;

    Vector xi;
    double seconds = 0.0;
    if (mode == QuasiMode::Stepwise) {
      const auto tic = std::chrono::steady_clock::now();
      stepper.apply(mu, dz);
      const auto toc = std::chrono::steady_clock::now();
      seconds = std::chrono::duration<double>(toc - tic).count();
      xi = std::move(mu);
    } else {
      const auto tic = std::chrono::steady_clock::now();
      xi = matvec(expm(detail::zakai_exponent(a, drift, t, cumulative)),
                  p0.vec());
      const auto toc = std::chrono::steady_clock::now();
      seconds = std::chrono::duration<double>(toc - tic).count();
    }
    traj.step_seconds.push_back(seconds);

    double total = 0.0;
    for (double x : xi) total += std::max(x, 0.0);
    bool flagged = false;
    Distribution post =
        detail::normalize_or_reset(std::move(xi), model, t, &flagged);
    mu = post.vec();
    traj.states.push_back(FilterState{k, t, std::move(post), total, flagged});
  }
  return traj;
}

/* One Milstein step of the Zakai recursion:
   xi' = [I + (A - D^2/2) h + D (I + (D/2) dz) dz] xi, i.e. Euler plus the
   second-order noise term (D^2/2)(dz^2 - h) that makes the scheme strong
   order one.  Positivity smoothing floors entries at
   eps = 1e-12 * |xi'|_1; a vector whose entries were all clipped is
   returned as-is with the reset flag raised. */
inline UnnormalizedState milstein_step(const Vector& xi, double dz, double h,
                                       const Matrix& a,
                                       const DriftMatrix& drift) {
  const std::size_t d = xi.size();
  if (!a.square() || a.rows() != d || drift.dim() != d)
    fail(ErrorCode::ShapeError, "Zakai state dimension mismatch");
  if (!(h >= 0.0) || !std::isfinite(h))
    fail(ErrorCode::InvalidTime, "step length must be nonnegative");
  if (!std::isfinite(dz))
    fail(ErrorCode::DomainError, "observation increment must be finite");

  UnnormalizedState out;
  out.xi.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double di = drift.diag[i];
    double acc =
        (1.0 - 0.5 * di * di * h + di * (1.0 + 0.5 * di * dz) * dz) * xi[i];
    for (std::size_t j = 0; j < d; ++j) acc += a(i, j) * h * xi[j];
    out.xi[i] = acc;
  }

  double norm1 = 0.0;
  for (double x : out.xi) norm1 += std::abs(x);
  const double eps = 1e-12 * norm1;
  bool all_clipped = norm1 > 0.0;
  for (double& x : out.xi) {
    if (x < eps)
      x = eps;
    else
      all_clipped = false;
  }
  out.reset = all_clipped || !(norm1 > 0.0);
  return out;
}

/* Model-level step; a fully clipped vector is replaced by the time-h
   marginal (the trajectory driver substitutes the marginal at the step's
   absolute time instead). */
inline UnnormalizedState milstein_step(const Vector& xi, double dz, double h,
                                       const ModelSpec& model) {
  UnnormalizedState out =
      milstein_step(xi, dz, h, detail::zakai_generator(model),
                    DriftMatrix::from_model(model));
  if (out.reset)
    out.xi = marginal(model.generator(), model.initial(), h).vec();
  return out;
}

/* Milstein-discretized Zakai filtering.  The recursion is linear in xi, so
   the per-step renormalization only guards against over/underflow and does
   not change the reported posterior. */
inline FilterTrajectory milstein_filter(const ObservationSeries& obs,
                                        const ModelSpec& model,
                                        const Distribution& p0) {
  if (p0.size() != model.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  const std::size_t n = obs.size();
  FilterTrajectory traj;
  traj.states.reserve(n + 1);
  traj.step_seconds.reserve(n);
  traj.states.push_back(FilterState{0, 0.0, p0, 1.0, false});
  if (n == 0) return traj;
  if (!(obs.h > 0.0) || !std::isfinite(obs.h))
    fail(ErrorCode::InvalidTime, "observation gap must be positive");

  const Matrix a = detail::zakai_generator(model);
  const DriftMatrix drift = DriftMatrix::from_model(model);

  Vector xi = p0.vec();
  for (std::size_t k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) * obs.h;

    const auto tic = std::chrono::steady_clock::now();
    UnnormalizedState next =
        milstein_step(xi, obs.increments[k - 1], obs.h, a, drift);
    const auto toc = std::chrono::steady_clock::now();
    traj.step_seconds.push_back(
        std::chrono::duration<double>(toc - tic).count());

    if (next.reset)
      next.xi = marginal(model.generator(), model.initial(), t).vec();
    double total = 0.0;
    for (double x : next.xi) total += x;
    Distribution post = Distribution::renormalized(std::move(next.xi));
    xi = post.vec();
    traj.states.push_back(FilterState{k, t, std::move(post), total, next.reset});
  }
  return traj;
}

}  // namespace ctfilter
