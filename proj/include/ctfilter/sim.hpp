#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctfilter/ctmc.hpp"
#include "ctfilter/model.hpp"
#include "ctfilter/rng.hpp"

namespace ctfilter {

// Exact integral of the drift along a sampled path: sum of alpha_state times
// the overlap of each holding interval with [0, t].
inline double integrate_path(const CtmcPath& path, const Vector& alphas,
                             double t) {
  if (!(t >= 0.0) || !(t <= path.horizon))
    fail(ErrorCode::OutOfRange, "time outside the sampled horizon");
  double acc = 0.0;
  const std::size_t n = path.jump_times.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double lo = path.jump_times[k];
    if (lo >= t) break;
    const double seg_end = (k + 1 < n) ? path.jump_times[k + 1] : path.horizon;
    const double hi = std::min(seg_end, t);
    const auto s = static_cast<std::size_t>(path.states[k]);
    if (s >= alphas.size())
      fail(ErrorCode::ShapeError, "state index outside the drift vector");
    acc += alphas[s] * (hi - lo);
  }
  return acc;
}

// A model plus an experiment layout: horizon T split into n_obs equal gaps,
// a seed, and an optional stride (use only every stride-th increment).
struct Scenario {
  ModelSpec model;
  double horizon;
  std::size_t n_obs;
  std::uint64_t seed;
  std::size_t stride;

  Scenario(ModelSpec m, double T, std::size_t n, std::uint64_t sd = 0,
           std::size_t strd = 1)
      : model(std::move(m)), horizon(T), n_obs(n), seed(sd), stride(strd) {
    if (!(T > 0.0) || !std::isfinite(T))
      fail(ErrorCode::InvalidTime, "horizon must be positive");
    if (n == 0) fail(ErrorCode::InvalidConfig, "need at least one observation");
    if (strd == 0) fail(ErrorCode::InvalidConfig, "stride must be >= 1");
  }

  double step() const { return horizon / static_cast<double>(n_obs); }
};

// Discrete observations of the drift integral corrupted by Gaussian noise:
// increments dZ_k over (t_{k-1}, t_k], t_k = k h, plus the sampled truth
// (state and exact integral at every t_k, k = 0..N) for diagnostics.
struct ObservationSeries {
  double h = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> increments;    // k = 1..N
  std::vector<double> cumulative;    // Z at t_k, k = 1..N (Z_0 = 0)
  std::vector<std::size_t> true_states;  // k = 0..N when truth recorded
  std::vector<double> true_j;            // k = 0..N when truth recorded

  std::size_t size() const { return increments.size(); }
  bool has_truth() const { return !true_states.empty(); }
};

inline ObservationSeries simulate_observations(const Scenario& sc) {
  const ModelSpec& m = sc.model;
  const double h = sc.step();
  const std::size_t n = sc.n_obs;
  Rng rng(sc.seed);
  const CtmcPath path =
      sample_path(m.generator(), m.initial(), sc.horizon, rng);

  ObservationSeries out;
  out.h = h;
  out.seed = sc.seed;
  out.increments.resize(n);
  out.cumulative.resize(n);
  out.true_states.resize(n + 1);
  out.true_j.resize(n + 1);
  out.true_states[0] = static_cast<std::size_t>(path.states.front());
  out.true_j[0] = 0.0;

  const double noise_scale = m.sigma() * std::sqrt(h);
  double z = 0.0, j_prev = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    // Guard the last grid time against rounding slightly past the horizon.
    const double t = std::min(static_cast<double>(k) * h, path.horizon);
    const double j = integrate_path(path, m.alphas(), t);
    const double dz = (j - j_prev) + noise_scale * rng.normal();
    out.increments[k - 1] = dz;
    z += dz;
    out.cumulative[k - 1] = z;
    out.true_states[k] = static_cast<std::size_t>(path.state_at(t));
    out.true_j[k] = j;
    j_prev = j;
  }
  return out;
}

// The two benchmark parameter sets.  sigma applies to either preset.
inline Scenario preset(const std::string& name, double sigma = 1.0) {
  if (name == "two-state") {
    ModelSpec m(Vector{-3.0, 1.0},
                GeneratorMatrix::validated(Matrix{{-2.0, 2.0}, {3.0, -3.0}}),
                Distribution(Vector{0.1, 0.9}), sigma);
    return Scenario(std::move(m), 2.0, 100, 42);
  }
  if (name == "five-state") {
    ModelSpec m(Vector{-3.0, -1.0, 0.0, 1.0, 2.0},
                GeneratorMatrix::validated(
                    Matrix{{-1.0, 0.5, 0.3, 0.1, 0.1},
                           {0.4, -1.0, 0.3, 0.1, 0.2},
                           {0.1, 0.1, -1.0, 0.4, 0.4},
                           {0.1, 0.1, 0.3, -1.0, 0.5},
                           {0.1, 0.1, 0.3, 0.5, -1.0}}),
                Distribution(Vector{0.1, 0.3, 0.3, 0.2, 0.1}), sigma);
    return Scenario(std::move(m), 5.0, 50, 42);
  }
  fail(ErrorCode::InvalidConfig, "unknown preset: " + name);
}

}  // namespace ctfilter
