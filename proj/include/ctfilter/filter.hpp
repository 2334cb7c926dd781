#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "ctfilter/ctmc.hpp"
#include "ctfilter/error.hpp"
#include "ctfilter/provider.hpp"
#include "ctfilter/sim.hpp"

namespace ctfilter {

/* Posterior of the hidden state given the observation increments seen so
   far, together with diagnostics of the update that produced it.  The
   initial state (n = 0) carries normalizer 1 and is never degenerate. */
struct FilterState {
  std::size_t n = 0;        // increments absorbed
  double t = 0.0;           // observation time
  Distribution mu;          // posterior over states
  double normalizer = 1.0;  // sum of Bayes numerators of this update
  bool degenerate = false;  // all likelihoods underflowed; prediction only
};

struct FilterTrajectory {
  std::vector<FilterState> states;   // length = steps + 1
  std::vector<double> step_seconds;  // wall time per update, length = steps

  std::size_t size() const { return states.size(); }
  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  const FilterState& back() const { return states.back(); }
};

namespace detail {

struct BayesUpdate {
  Vector mu;
  double normalizer = 0.0;
  bool degenerate = false;
};

/* One update mu'(j) = sum_i mu(i) p_ij(h) g_ij(dz, h) / normalizer, with the
   normalizer taken as the sum of the numerators.  For an exact provider this
   equals the marginal-likelihood denominator sum_i g_i(dz, h) mu(i); summing
   the numerators keeps mu' on the simplex even for approximate providers
   whose marginal and conditional densities come from different numerics. */
inline BayesUpdate bayes_step(const Vector& mu, double dz, double h,
                              const StochasticMatrix& p,
                              const DensityProvider& provider) {
  const std::size_t d = mu.size();
  BayesUpdate out;
  out.mu.assign(d, 0.0);
  bool all_tiny = true;
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double w = mu[i] * p(i, j);
      if (w > 0.0) acc += w * provider.g_conditional(i, j, dz, h);
    }
    out.mu[j] = acc;
    out.normalizer += acc;
    if (acc >= 1e-300) all_tiny = false;
  }
  if (all_tiny) {
    /* Outlier increment: every numerator underflowed.  Keep filtering with
       the prediction step alone and flag the update. */
    out.degenerate = true;
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += mu[i] * p(i, j);
      out.mu[j] = acc;
    }
  }
  return out;
}

}  // namespace detail

/* Single filter update; validates arguments and builds the transition matrix
   itself.  Batch runs should use run_filter, which hoists the matrix. */
inline Distribution filter_step(const Distribution& mu, double dz, double h,
                                const DensityProvider& provider) {
  if (mu.size() != provider.dim())
    fail(ErrorCode::ShapeError, "posterior dimension mismatch");
  if (!(h > 0.0) || !std::isfinite(h))
    fail(ErrorCode::InvalidTime, "observation gap must be positive");
  if (!std::isfinite(dz))
    fail(ErrorCode::DomainError, "observation increment must be finite");
  const StochasticMatrix p = provider.transition(h);
  return Distribution::renormalized(
      detail::bayes_step(mu.vec(), dz, h, p, provider).mu);
}

/* Run the recursion over an observation series starting from mu_0 = p0.
   With stride k > 1 only every k-th measurement is used: consecutive
   increments are summed in blocks of k and the provider is queried at the
   effective gap h' = k h, leaving floor(N/k) updates (the tail remainder is
   dropped).  Degenerate updates are flagged, never fatal.  step_seconds
   times the Bayes update alone; the transition matrix and any lazy density
   tables are built up front. */
inline FilterTrajectory run_filter(const ObservationSeries& obs,
                                   const DensityProvider& provider,
                                   const Distribution& p0,
                                   std::size_t stride = 1) {
  if (p0.size() != provider.dim())
    fail(ErrorCode::ShapeError, "initial law dimension mismatch");
  if (stride < 1) fail(ErrorCode::InvalidConfig, "stride must be >= 1");
  const std::size_t n_steps = obs.size() / stride;

  FilterTrajectory traj;
  traj.states.reserve(n_steps + 1);
  traj.step_seconds.reserve(n_steps);
  traj.states.push_back(FilterState{0, 0.0, p0, 1.0, false});
  if (n_steps == 0) return traj;

  const double eff_h = static_cast<double>(stride) * obs.h;
  if (!(eff_h > 0.0) || !std::isfinite(eff_h))
    fail(ErrorCode::InvalidTime, "observation gap must be positive");
  const StochasticMatrix p = provider.transition(eff_h);
  provider.g_conditional(0, 0, 0.0, eff_h);  // realize lazy tables untimed

  Vector mu = p0.vec();
  for (std::size_t m = 1; m <= n_steps; ++m) {
    double dz = 0.0;
    for (std::size_t r = (m - 1) * stride; r < m * stride; ++r)
      dz += obs.increments[r];
    if (!std::isfinite(dz))
      fail(ErrorCode::DomainError, "observation increment must be finite");

    const auto tic = std::chrono::steady_clock::now();
    detail::BayesUpdate upd = detail::bayes_step(mu, dz, eff_h, p, provider);
    const auto toc = std::chrono::steady_clock::now();
    traj.step_seconds.push_back(
        std::chrono::duration<double>(toc - tic).count());

    Distribution post = Distribution::renormalized(std::move(upd.mu));
    mu = post.vec();
    traj.states.push_back(FilterState{m, static_cast<double>(m) * eff_h,
                                      std::move(post), upd.normalizer,
                                      upd.degenerate});
  }
  return traj;
}

/* Posterior summaries per step.  States are reported 1-based: the index
   mean is sum_j j mu(j) over j = 1..d and map_state is the 1-based argmax
   (ties resolved to the lowest index). */
struct StepSummary {
  std::size_t n = 0;
  double t = 0.0;
  double state_index_mean = 0.0;
  double alpha_mean = 0.0;
  std::size_t map_state = 1;
  bool degenerate = false;
};

inline StepSummary summarize_state(const FilterState& s, const Vector& alphas) {
  if (alphas.size() != s.mu.size())
    fail(ErrorCode::ShapeError, "drift vector dimension mismatch");
  StepSummary out{s.n, s.t, 0.0, 0.0, 1, s.degenerate};
  double best = s.mu[0];
  for (std::size_t j = 0; j < s.mu.size(); ++j) {
    out.state_index_mean += static_cast<double>(j + 1) * s.mu[j];
    out.alpha_mean += alphas[j] * s.mu[j];
    if (s.mu[j] > best) {
      best = s.mu[j];
      out.map_state = j + 1;
    }
  }
  return out;
}

inline std::vector<StepSummary> summarize(const FilterTrajectory& traj,
                                          const Vector& alphas) {
  std::vector<StepSummary> out;
  out.reserve(traj.size());
  for (const FilterState& s : traj.states)
    out.push_back(summarize_state(s, alphas));
  return out;
}

/* Pairwise comparison of two trajectories on the same observation grid
   against the true state sequence (0-based, aligned with the trajectory
   including the initial state).  rmse_vs_truth measures state_index_mean
   against the 1-based true index; map_accuracy the fraction of states whose
   MAP estimate matches the truth; mean_step_seconds averages the recorded
   update times (0 when none were recorded). */
struct CompareReport {
  double mean_abs_diff = 0.0;
  double rmse_vs_truth_a = 0.0;
  double rmse_vs_truth_b = 0.0;
  double map_accuracy_a = 0.0;
  double map_accuracy_b = 0.0;
  double mean_step_seconds_a = 0.0;
  double mean_step_seconds_b = 0.0;
};

namespace detail {

inline double mean_or_zero(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

}  // namespace detail

inline CompareReport compare(const FilterTrajectory& a,
                             const FilterTrajectory& b,
                             const std::vector<std::size_t>& truth) {
  if (a.size() != b.size() || a.size() != truth.size())
    fail(ErrorCode::ShapeError, "trajectory/truth length mismatch");
  if (a.states.empty()) fail(ErrorCode::ShapeError, "empty trajectory");
  const std::size_t n = a.size();
  const std::size_t d = a.states.front().mu.size();

  CompareReport rep;
  double sq_a = 0.0, sq_b = 0.0;
  std::size_t hit_a = 0, hit_b = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Distribution& mu_a = a.states[k].mu;
    const Distribution& mu_b = b.states[k].mu;
    if (mu_a.size() != d || mu_b.size() != d)
      fail(ErrorCode::ShapeError, "posterior dimension mismatch");
    if (truth[k] >= d)
      fail(ErrorCode::ShapeError, "true state outside model range");

    double mean_a = 0.0, mean_b = 0.0;
    std::size_t map_a = 0, map_b = 0;
    for (std::size_t j = 0; j < d; ++j) {
      rep.mean_abs_diff += std::abs(mu_a[j] - mu_b[j]);
      mean_a += static_cast<double>(j + 1) * mu_a[j];
      mean_b += static_cast<double>(j + 1) * mu_b[j];
      if (mu_a[j] > mu_a[map_a]) map_a = j;
      if (mu_b[j] > mu_b[map_b]) map_b = j;
    }
    const double true_index = static_cast<double>(truth[k] + 1);
    sq_a += (mean_a - true_index) * (mean_a - true_index);
    sq_b += (mean_b - true_index) * (mean_b - true_index);
    if (map_a == truth[k]) ++hit_a;
    if (map_b == truth[k]) ++hit_b;
  }
  const double dn = static_cast<double>(n);
  rep.mean_abs_diff /= dn * static_cast<double>(d);
  rep.rmse_vs_truth_a = std::sqrt(sq_a / dn);
  rep.rmse_vs_truth_b = std::sqrt(sq_b / dn);
  rep.map_accuracy_a = static_cast<double>(hit_a) / dn;
  rep.map_accuracy_b = static_cast<double>(hit_b) / dn;
  rep.mean_step_seconds_a = detail::mean_or_zero(a.step_seconds);
  rep.mean_step_seconds_b = detail::mean_or_zero(b.step_seconds);
  return rep;
}

}  // namespace ctfilter
