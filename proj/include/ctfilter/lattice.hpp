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
#include "ctfilter/error.hpp"
#include "ctfilter/model.hpp"
#include "ctfilter/numerics.hpp"
#include "ctfilter/provider.hpp"

namespace ctfilter {

/* Law of the drift integral of the time-discretized chain: the chain is
   sampled at N sub-steps of width dt = h/N and the integral is replaced by
   the right-endpoint sum dt * (alpha_{e_1} + ... + alpha_{e_N}).  The sum
   takes finitely many values; `support` lists them in increasing order and
   joint[v](i, j) = P(sum = support[v], chain ends in j | chain starts in i).
   Summing joint[v] over v recomposes the full-step transition matrix, so
   the endpoint-resolved weights are exactly consistent with it. */
struct LatticeLaw {
  ModelSpec model;
  double h = 0.0;
  std::size_t substeps = 0;
  StochasticMatrix step;  // sub-step transition matrix
  std::vector<double> support;
  std::vector<Matrix> joint;  // aligned with support

  std::size_t dim() const { return model.dim(); }
  double dt() const { return h / static_cast<double>(substeps); }

  // P(sum = support[v] | start i), summing out the end state.
  double start_prob(std::size_t v, std::size_t i) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim(); ++j) acc += joint[v](i, j);
    return acc;
  }

  // Sum of the endpoint-resolved weights over the support; equals the
  // full-step transition matrix up to rounding.
  Matrix transition_sum() const {
    Matrix acc(dim(), dim(), 0.0);
    for (const Matrix& m : joint)
      for (std::size_t i = 0; i < dim(); ++i)
        for (std::size_t j = 0; j < dim(); ++j) acc(i, j) += m(i, j);
    return acc;
  }
};

namespace detail {

/* Slot in the value-indexed accumulator, merging keys closer than tol; the
   first-seen key stays as the representative.  Existing keys are pairwise
   more than tol apart, so at most one can match. */
inline Matrix& merged_slot(std::map<double, Matrix>& acc, double key,
                           double tol, std::size_t d) {
  auto it = acc.lower_bound(key - tol);
  if (it != acc.end() && std::abs(it->first - key) <= tol) return it->second;
  return acc.emplace(key, Matrix(d, d, 0.0)).first->second;
}

}  // namespace detail

/* Dynamic program over (accumulated sum, current state): one pass per
   sub-step, equivalent to enumerating all state paths but polynomial when
   the drifts generate few distinct sums.  Values within 1e-12*h of each
   other are merged, which keeps sums over rational drift grids exact. */
inline LatticeLaw build_lattice(const ModelSpec& model, double h,
                                std::size_t substeps,
                                std::size_t support_cap = 1000000) {
  if (!(h > 0.0) || !std::isfinite(h))
    fail(ErrorCode::InvalidTime, "step width must be positive");
  if (substeps < 1)
    fail(ErrorCode::InvalidConfig, "need at least one sub-step");
  const std::size_t d = model.dim();
  const double dt = h / static_cast<double>(substeps);
  StochasticMatrix step = transition_matrix(model.generator(), dt);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (i != j && !(step(i, j) > 0.0))
        fail(ErrorCode::UnreachablePair,
             "sub-step transition probability vanishes for a state pair; "
             "the discretized chain cannot represent this model");

  const double tol = 1e-12 * h;
  std::map<double, Matrix> acc;
  {
    Matrix eye(d, d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
    acc.emplace(0.0, std::move(eye));
  }
  for (std::size_t m = 0; m < substeps; ++m) {
    std::map<double, Matrix> next;
    for (const auto& [value, mat] : acc) {
      for (std::size_t e = 0; e < d; ++e) {
        Matrix& slot =
            detail::merged_slot(next, value + dt * model.alpha(e), tol, d);
        for (std::size_t i = 0; i < d; ++i) {
          double flow = 0.0;
          for (std::size_t k = 0; k < d; ++k) flow += mat(i, k) * step(k, e);
          slot(i, e) += flow;
        }
      }
      if (next.size() > support_cap)
        fail(ErrorCode::SupportOverflow,
             "distinct lattice sums exceed the support cap");
    }
    acc = std::move(next);
  }

  LatticeLaw law{model, h, substeps, std::move(step), {}, {}};
  law.support.reserve(acc.size());
  law.joint.reserve(acc.size());
  for (auto& [value, mat] : acc) {
    law.support.push_back(value);
    law.joint.push_back(std::move(mat));
  }
  return law;
}

/* Equal-width Gaussian mixture sum_c weight[c] * phi_stddev(z - mean[c]);
   weights are nonnegative and sum to one. */
struct GaussianMixture {
  std::vector<double> means;
  std::vector<double> weights;
  double stddev = 0.0;

  std::size_t size() const { return means.size(); }

  double operator()(double z) const {
    double acc = 0.0;
    for (std::size_t c = 0; c < means.size(); ++c)
      acc += weights[c] * gaussian_pdf(z - means[c], stddev);
    return acc;
  }

  double cdf(double z) const {
    double acc = 0.0;
    const double scale = stddev * std::sqrt(2.0);
    for (std::size_t c = 0; c < means.size(); ++c)
      acc += weights[c] * 0.5 * std::erfc((means[c] - z) / scale);
    return acc;
  }
};

namespace detail {

inline void check_lattice_query(const LatticeLaw& law, double sigma,
                                std::size_t i) {
  if (law.substeps < 1 || law.support.empty())
    fail(ErrorCode::InvalidConfig, "lattice law is empty");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    fail(ErrorCode::DomainError, "noise scale must be positive");
  if (i >= law.dim()) fail(ErrorCode::OutOfRange, "state index out of range");
}

}  // namespace detail

/* Mixture for the observed increment given the start state: one component
   per support value, weighted by the lattice law, all sharing std-dev
   sigma*sqrt(h).  Weights are normalized by their own sum, which is 1 up
   to rounding. */
inline GaussianMixture marginal_mixture(const LatticeLaw& law, double sigma,
                                        std::size_t i) {
  detail::check_lattice_query(law, sigma, i);
  GaussianMixture mix;
  mix.stddev = sigma * std::sqrt(law.h);
  mix.means = law.support;
  mix.weights.resize(law.support.size());
  double total = 0.0;
  for (std::size_t v = 0; v < law.support.size(); ++v) {
    mix.weights[v] = law.start_prob(v, i);
    total += mix.weights[v];
  }
  for (double& w : mix.weights) w /= total;
  return mix;
}

/* Mixture for the observed increment given start and end states, weighted
   by the endpoint-resolved law normalized by its own mass (the lattice's
   transition probability for the pair). */
inline GaussianMixture conditional_mixture(const LatticeLaw& law, double sigma,
                                           std::size_t i, std::size_t j) {
  detail::check_lattice_query(law, sigma, i);
  if (j >= law.dim()) fail(ErrorCode::OutOfRange, "state index out of range");
  double total = 0.0;
  for (std::size_t v = 0; v < law.support.size(); ++v)
    total += law.joint[v](i, j);
  if (!(total > 0.0))
    fail(ErrorCode::UnreachablePair,
         "end state unreachable from start state over this step");
  GaussianMixture mix;
  mix.stddev = sigma * std::sqrt(law.h);
  mix.means = law.support;
  mix.weights.resize(law.support.size());
  for (std::size_t v = 0; v < law.support.size(); ++v)
    mix.weights[v] = law.joint[v](i, j) / total;
  return mix;
}

/* DensityProvider over the discretized-chain mixtures: the law and all
   per-state mixtures are built once per step width and reused across
   filter steps; lookups just evaluate a short Gaussian sum. */
class LatticeProvider final : public DensityProvider {
 public:
  LatticeProvider(ModelSpec model, double sigma, std::size_t substeps,
                  std::size_t support_cap = 1000000)
      : model_(std::move(model)),
        sigma_(sigma),
        substeps_(substeps),
        cap_(support_cap) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      fail(ErrorCode::DomainError, "noise scale must be positive");
    if (substeps_ < 1)
      fail(ErrorCode::InvalidConfig, "need at least one sub-step");
  }

  std::size_t dim() const override { return model_.dim(); }
  std::string name() const override { return "lattice"; }
  std::size_t substeps() const { return substeps_; }
  double sigma() const { return sigma_; }

  StochasticMatrix transition(double h) const override {
    return entry(h)->p;
  }

  double g_marginal(std::size_t i, double dz, double h) const override {
    const auto e = entry(h);
    if (i >= model_.dim())
      fail(ErrorCode::OutOfRange, "state index out of range");
    return e->marginal[i](dz);
  }

  double g_conditional(std::size_t i, std::size_t j, double dz,
                       double h) const override {
    const auto e = entry(h);
    const std::size_t d = model_.dim();
    if (i >= d || j >= d)
      fail(ErrorCode::OutOfRange, "state index out of range");
    return e->conditional[i * d + j](dz);
  }

  const LatticeLaw& law(double h) const { return entry(h)->law; }

  const GaussianMixture& marginal(std::size_t i, double h) const {
    if (i >= model_.dim())
      fail(ErrorCode::OutOfRange, "state index out of range");
    return entry(h)->marginal[i];
  }

  const GaussianMixture& conditional(std::size_t i, std::size_t j,
                                     double h) const {
    const std::size_t d = model_.dim();
    if (i >= d || j >= d)
      fail(ErrorCode::OutOfRange, "state index out of range");
    return entry(h)->conditional[i * d + j];
  }

 private:
  struct Entry {
    LatticeLaw law;
    StochasticMatrix p;
    std::vector<GaussianMixture> marginal;
    std::vector<GaussianMixture> conditional;  // i * dim + j
  };

  std::shared_ptr<const Entry> entry(double h) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(h);
    if (it != cache_.end()) return it->second;
    LatticeLaw law = build_lattice(model_, h, substeps_, cap_);
    StochasticMatrix p = StochasticMatrix::validated(law.transition_sum());
    const std::size_t d = law.dim();
    std::vector<GaussianMixture> marg, cond;
    marg.reserve(d);
    cond.reserve(d * d);
    for (std::size_t i = 0; i < d; ++i)
      marg.push_back(marginal_mixture(law, sigma_, i));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        cond.push_back(conditional_mixture(law, sigma_, i, j));
    auto e = std::make_shared<const Entry>(Entry{
        std::move(law), std::move(p), std::move(marg), std::move(cond)});
    cache_.emplace(h, e);
    return e;
  }

  ModelSpec model_;
  double sigma_;
  std::size_t substeps_;
  std::size_t cap_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::shared_ptr<const Entry>> cache_;
};

}  // namespace ctfilter
