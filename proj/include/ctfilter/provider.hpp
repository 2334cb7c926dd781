#pragma once

#include <cstddef>
#include <string>

#include "ctfilter/ctmc.hpp"

namespace ctfilter {

// Contract supplying everything the discrete filter recursion consumes:
// transition probabilities p_ij(h), marginal increment densities g_i(z, h)
// and conditional increment densities g_ij(z, h).  Implementations: exact
// two-state closed forms, tabulated transport-PDE solutions, and lattice
// Gaussian mixtures.  States are 0-based; h is the inter-observation gap.
class DensityProvider {
 public:
  virtual ~DensityProvider() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  // P(eps_{t+h} = j | eps_t = i) as a validated stochastic matrix.
  virtual StochasticMatrix transition(double h) const = 0;

  // Density of the increment Z_{t+h} - Z_t at dz given eps_t = i.
  virtual double g_marginal(std::size_t i, double dz, double h) const = 0;

  // Same given eps_t = i and eps_{t+h} = j.
  virtual double g_conditional(std::size_t i, std::size_t j, double dz,
                               double h) const = 0;
};

}  // namespace ctfilter
