#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctmc.hpp"
#include "error.hpp"
#include "linalg.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "provider.hpp"

namespace ctfilter {

/* Space-time grid for the transport solve on one observation gap [0, h].
   The x-range must cover the hull of {0} and {alpha_i h}: every deposit
   position alpha_j t, t in [0, h], lies in that hull. */
struct PdeGrid {
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t nx = 0;
  std::size_t nt = 0;

  double dx() const { return (x_max - x_min) / static_cast<double>(nx - 1); }
  double dt(double h) const { return h / static_cast<double>(nt); }

  double cfl(const ModelSpec& model, double h) const {
    double amax = 0.0;
    for (double a : model.alphas()) amax = std::max(amax, std::abs(a));
    return amax * dt(h) / dx();
  }

  void validate(const ModelSpec& model, double h) const {
    if (!(h > 0.0) || !std::isfinite(h))
      fail(ErrorCode::InvalidTime, "observation gap must be positive");
    if (nx < 201) fail(ErrorCode::GridTooCoarse, "need at least 201 x-nodes");
    if (nt < 1) fail(ErrorCode::GridTooCoarse, "need at least one time level");
    if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max))
      fail(ErrorCode::DomainError, "empty x-range");
    double lo = 0.0, hi = 0.0;
    for (double a : model.alphas()) {
      lo = std::min(lo, a * h);
      hi = std::max(hi, a * h);
    }
    if (x_min > lo || x_max < hi)
      fail(ErrorCode::DomainError, "x-range must cover the transport hull");
    const double c = cfl(model, h);
    if (c > 0.9) {
      double amax = 0.0;
      for (double a : model.alphas()) amax = std::max(amax, std::abs(a));
      const std::size_t need = static_cast<std::size_t>(
          std::ceil(amax * h / (0.9 * dx())));
      std::ostringstream msg;
      msg << "CFL " << c << " exceeds 0.9; need nt >= " << need;
      fail(ErrorCode::GridTooCoarse, msg.str());
    }
  }

  /* Transport hull padded by pad_fraction of its width on each side; nt
     chosen so the CFL number lands at cfl_target.  Running close to the CFL
     bound keeps the upwind diffusion (~ alpha dx (1-CFL)/2) small, which is
     what keeps mass from leaking past the pad. */
  static PdeGrid standard(const ModelSpec& model, double h,
                          std::size_t nx = 1201, double cfl_target = 0.8,
                          double pad_fraction = 0.05) {
    if (!(h > 0.0) || !std::isfinite(h))
      fail(ErrorCode::InvalidTime, "observation gap must be positive");
    if (!(cfl_target > 0.0) || cfl_target > 0.9)
      fail(ErrorCode::InvalidConfig, "cfl target must lie in (0, 0.9]");
    double lo = 0.0, hi = 0.0, amax = 0.0;
    for (double a : model.alphas()) {
      lo = std::min(lo, a * h);
      hi = std::max(hi, a * h);
      amax = std::max(amax, std::abs(a));
    }
    const double width = hi - lo;
    const double pad =
        pad_fraction * (width > 0.0 ? width : std::max(1.0, std::abs(hi)));
    PdeGrid g;
    g.x_min = lo - pad;
    g.x_max = hi + pad;
    g.nx = std::max<std::size_t>(nx, 201);
    const double dx = g.dx();
    g.nt = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(amax * h / (cfl_target * dx))));
    return g;
  }

  /* Fixed production grid: [-5, 5] with 3000 nodes and 2000 time levels per
     unit of time. */
  static PdeGrid reference(double h) {
    if (!(h > 0.0) || !std::isfinite(h))
      fail(ErrorCode::InvalidTime, "observation gap must be positive");
    PdeGrid g;
    g.x_min = -5.0;
    g.x_max = 5.0;
    g.nx = 3000;
    g.nt = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(2000.0 * h)));
    return g;
  }
};

enum class AtomMode {
  Separated,  // carry e^{-q_j t} delta_{alpha_j t} analytically (default)
  Mollified,  // replace the initial point mass by a narrow Gaussian
};

/* Joint end-of-gap densities f~_ij(., h) of (integrated drift, end state)
   given the start state: smooth parts on a shared x-grid plus the no-switch
   atom of weight e^{-q_i h} at alpha_i h on the diagonal. */
struct DensityTable {
  ModelSpec model;
  double h;
  PdeGrid grid;
  StochasticMatrix p;  // e^{Qh}
  Vector xs;
  std::vector<Vector> smooth;  // (i*d + j) -> values of the smooth part
  Vector atom_weight;          // per state; zero in mollified mode
  Vector atom_pos;             // alpha_i h
  double mass_error_mid;       // max_ij |integral - p_ij| at t = h/2
  double mass_error_final;     // same at t = h
  double boundary_loss;        // total mass lost through the x-boundaries

  std::size_t dim() const { return model.dim(); }

  const Vector& smooth_part(std::size_t i, std::size_t j) const {
    if (i >= dim() || j >= dim())
      fail(ErrorCode::OutOfRange, "state index out of range");
    return smooth[i * dim() + j];
  }

  /* f~_ij as a grid density (atom attached on the diagonal). */
  GridDensity unconditional(std::size_t i, std::size_t j) const {
    const Vector& v = smooth_part(i, j);
    std::optional<Atom> atom;
    if (i == j && atom_weight[i] > 0.0)
      atom = Atom{atom_pos[i], atom_weight[i]};
    return GridDensity(xs, v, atom);
  }
};

/* Evolve the coupled transport system
     d/dt u_i + alpha_i d/dx u_i = sum_k q_ik u_k
   for each end state j, with initial data delta_ij delta_0(x), by explicit
   first-order upwinding.  The diagonal atom e^{-q_j t} delta_{alpha_j t} is
   carried in closed form; the mass it sheds over a step,
   (e^{-q_j t} - e^{-q_j (t+dt)}) q_ij / q_j, enters component i as an
   area-weighted deposit at the atom's position. */
inline DensityTable solve_density_system(const ModelSpec& model, double h,
                                         const PdeGrid& grid,
                                         AtomMode mode = AtomMode::Separated,
                                         double mollify_width = 0.0) {
  grid.validate(model, h);
  const std::size_t d = model.dim();
  const std::size_t nx = grid.nx;
  const std::size_t nt = grid.nt;
  const double dx = grid.dx();
  const double dt = grid.dt(h);
  const Matrix& q = model.generator().matrix();

  Vector xs(nx);
  for (std::size_t m = 0; m < nx; ++m)
    xs[m] = grid.x_min + static_cast<double>(m) * dx;

  Vector mollifier;
  if (mode == AtomMode::Mollified) {
    if (!(mollify_width > 0.0) || !std::isfinite(mollify_width))
      fail(ErrorCode::InvalidConfig, "mollifier width must be positive");
    if (mollify_width < 2.0 * dx)
      fail(ErrorCode::GridTooCoarse, "mollifier narrower than two grid cells");
    // A bump transported to the hull edge still has tails of width
    // ~ mollify_width plus the upwind smearing sqrt(2 nu h); without this
    // margin they leak through the boundary and the mass checks drift.
    double lo = 0.0, hi = 0.0, amax = 0.0;
    for (double a : model.alphas()) {
      lo = std::min(lo, a * h);
      hi = std::max(hi, a * h);
      amax = std::max(amax, std::abs(a));
    }
    const double margin =
        4.0 * (mollify_width + std::sqrt(amax * dx * h));
    if (grid.x_min > lo - margin || grid.x_max < hi + margin)
      fail(ErrorCode::InvalidConfig,
           "mollified solve needs the x-range to extend past the transport "
           "hull by four bump widths");
    mollifier.resize(nx);
    double mass = 0.0;
    for (std::size_t m = 0; m < nx; ++m) {
      mollifier[m] = gaussian_pdf(xs[m], mollify_width);
      mass += mollifier[m] * dx;
    }
    for (double& v : mollifier) v /= mass;
  }

  const StochasticMatrix p = transition_matrix(model.generator(), h);
  const std::size_t mid = nt / 2;
  Matrix p_mid(d, d, 0.0);
  if (mid > 0)
    p_mid = expm(q * (static_cast<double>(mid) * dt));

  std::vector<Vector> result(d * d, Vector(nx, 0.0));
  Vector atom_w(d, 0.0), atom_x(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double qi = -q(i, i);
    atom_w[i] = (mode == AtomMode::Separated) ? std::exp(-qi * h) : 0.0;
    atom_x[i] = model.alpha(i) * h;
  }

  double mass_err_mid = 0.0, mass_err_final = 0.0, boundary_loss = 0.0;
  std::vector<Vector> u(d, Vector(nx, 0.0));
  std::vector<Vector> next(d, Vector(nx, 0.0));

  for (std::size_t j = 0; j < d; ++j) {
    const double qj = -q(j, j);
    for (std::size_t i = 0; i < d; ++i)
      std::fill(u[i].begin(), u[i].end(), 0.0);
    if (mode == AtomMode::Mollified) u[j] = mollifier;

    for (std::size_t n = 0; n < nt; ++n) {
      const double t = static_cast<double>(n) * dt;

      for (std::size_t i = 0; i < d; ++i) {
        const double c = model.alpha(i) * dt / dx;
        const Vector& src = u[i];
        Vector& dst = next[i];
        if (c >= 0.0) {
          dst[0] = (1.0 - c) * src[0];
          for (std::size_t m = 1; m < nx; ++m)
            dst[m] = src[m] - c * (src[m] - src[m - 1]);
          boundary_loss += c * src[nx - 1] * dx;
        } else {
          for (std::size_t m = 0; m + 1 < nx; ++m)
            dst[m] = src[m] - c * (src[m + 1] - src[m]);
          dst[nx - 1] = (1.0 + c) * src[nx - 1];
          boundary_loss += -c * src[0] * dx;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double coef = q(i, k) * dt;
          if (coef == 0.0) continue;
          const Vector& uk = u[k];
          for (std::size_t m = 0; m < nx; ++m) dst[m] += coef * uk[m];
        }
      }

      if (mode == AtomMode::Separated && qj > 0.0) {
        const double shed =
            std::exp(-qj * t) - std::exp(-qj * (t + dt));
        const double pos = model.alpha(j) * t;
        double cell = (pos - grid.x_min) / dx;
        std::size_t idx = static_cast<std::size_t>(
            std::clamp(cell, 0.0, static_cast<double>(nx - 2)));
        if (idx > nx - 2) idx = nx - 2;
        const double frac =
            std::clamp(cell - static_cast<double>(idx), 0.0, 1.0);
        for (std::size_t i = 0; i < d; ++i) {
          if (i == j) continue;
          const double m_in = shed * q(i, j) / qj;
          if (m_in <= 0.0) continue;
          next[i][idx] += m_in * (1.0 - frac) / dx;
          next[i][idx + 1] += m_in * frac / dx;
        }
      }

      u.swap(next);

      if (n + 1 == mid || n + 1 == nt) {
        const bool final_level = (n + 1 == nt);
        const double t_level = static_cast<double>(n + 1) * dt;
        for (std::size_t i = 0; i < d; ++i) {
          double mass = 0.0;
          for (double v : u[i]) mass += v;
          mass *= dx;
          if (mode == AtomMode::Separated && i == j)
            mass += std::exp(-qj * t_level);
          const double ref = final_level ? p(i, j) : p_mid(i, j);
          const double err = std::abs(mass - ref);
          if (final_level)
            mass_err_final = std::max(mass_err_final, err);
          else
            mass_err_mid = std::max(mass_err_mid, err);
        }
      }
    }

    for (std::size_t i = 0; i < d; ++i) {
      Vector& v = u[i];
      for (double& x : v) {
        if (x < 0.0) {
          if (x < -1e-8)
            fail(ErrorCode::SolverInstability,
                 "transport solve produced negative density");
          x = 0.0;
        }
      }
      result[i * d + j] = v;
    }
  }

  return DensityTable{model,         h,
                      grid,          p,
                      std::move(xs), std::move(result),
                      std::move(atom_w), std::move(atom_x),
                      mass_err_mid,  mass_err_final,
                      boundary_loss};
}

/* Conditional law of the integrated drift given start i and end j:
   f_ij = f~_ij / p_ij(h), with atom weight e^{-q_i h} / p_ii(h) on the
   diagonal. */
inline GridDensity conditional_density(const DensityTable& table,
                                       std::size_t i, std::size_t j) {
  const std::size_t d = table.dim();
  if (i >= d || j >= d)
    fail(ErrorCode::OutOfRange, "state index out of range");
  const double pij = table.p(i, j);
  if (pij <= 1e-14)
    fail(ErrorCode::UnreachablePair,
         "endpoint pair has vanishing transition probability");
  Vector v = table.smooth_part(i, j);
  for (double& x : v) x /= pij;
  std::optional<Atom> atom;
  if (i == j && table.atom_weight[i] > 0.0)
    atom = Atom{table.atom_pos[i], table.atom_weight[i] / pij};
  return GridDensity(table.xs, std::move(v), atom);
}

/* Density provider backed by per-gap transport tables.  For each h the
   smooth parts are convolved with the observation noise once, tabulated on
   a z-grid of spacing sigma sqrt(h)/40 reaching 8 standard deviations past
   the transport hull, and renormalized so the smooth g~_ij mass equals
   p_ij - 1{i=j} e^{-q_i h}; the diagonal atom keeps its exact Gaussian
   term.  Lookups interpolate cubically, so per-step filter cost is a few
   polynomial evaluations per pair. */
class PdeProvider final : public DensityProvider {
 public:
  PdeProvider(ModelSpec model, double sigma, std::size_t nx = 1201,
              double cfl_target = 0.8, double pad_fraction = 0.05)
      : model_(std::move(model)),
        sigma_(sigma),
        nx_(nx),
        cfl_(cfl_target),
        pad_(pad_fraction) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      fail(ErrorCode::DomainError, "noise scale must be positive");
  }

  PdeProvider(DensityTable table, double sigma)
      : model_(table.model),
        sigma_(sigma),
        nx_(table.grid.nx),
        cfl_(0.8),
        pad_(0.05) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      fail(ErrorCode::DomainError, "noise scale must be positive");
    const double h = table.h;
    cache_.emplace(h, make_entry(std::move(table)));
  }

  std::size_t dim() const override { return model_.dim(); }
  std::string name() const override { return "pde"; }
  double sigma() const { return sigma_; }

  StochasticMatrix transition(double h) const override {
    return tables(h)->table.p;
  }

  double g_marginal(std::size_t i, double dz, double h) const override {
    const std::shared_ptr<const Entry> e = tables(h);
    const std::size_t d = model_.dim();
    if (i >= d) fail(ErrorCode::OutOfRange, "state index out of range");
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      acc += e->g_smooth[i * d + j].interpolate(dz);
    const DensityTable& t = e->table;
    if (t.atom_weight[i] > 0.0)
      acc += t.atom_weight[i] * gaussian_pdf(dz - t.atom_pos[i], e->s);
    return acc;
  }

  double g_conditional(std::size_t i, std::size_t j, double dz,
                       double h) const override {
    const std::shared_ptr<const Entry> e = tables(h);
    const std::size_t d = model_.dim();
    if (i >= d || j >= d)
      fail(ErrorCode::OutOfRange, "state index out of range");
    const DensityTable& t = e->table;
    const double pij = t.p(i, j);
    if (pij <= 1e-14)
      fail(ErrorCode::UnreachablePair,
           "endpoint pair has vanishing transition probability");
    double acc = e->g_smooth[i * d + j].interpolate(dz);
    if (i == j && t.atom_weight[i] > 0.0)
      acc += t.atom_weight[i] * gaussian_pdf(dz - t.atom_pos[i], e->s);
    return acc / pij;
  }

  const DensityTable& table(double h) const { return tables(h)->table; }

 private:
  struct Entry {
    DensityTable table;
    double s;  // sigma sqrt(h)
    std::vector<GridDensity> g_smooth;
  };

  std::shared_ptr<const Entry> make_entry(DensityTable table) const {
    const std::size_t d = table.dim();
    const double h = table.h;
    const double s = sigma_ * std::sqrt(h);
    double lo = 0.0, hi = 0.0;
    for (double a : model_.alphas()) {
      lo = std::min(lo, a * h);
      hi = std::max(hi, a * h);
    }
    const double z0 = lo - 8.0 * s;
    const double z1 = hi + 8.0 * s;
    const double spacing = s / 40.0;
    const std::size_t nz =
        2 + static_cast<std::size_t>(std::ceil((z1 - z0) / spacing));
    Vector zs(nz);
    for (std::size_t k = 0; k < nz; ++k)
      zs[k] = z0 + static_cast<double>(k) * spacing;

    std::vector<GridDensity> g_smooth;
    g_smooth.reserve(d * d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const GaussianSmoothed conv(
            GridDensity(table.xs, table.smooth_part(i, j)), s);
        Vector vals(nz);
        for (std::size_t k = 0; k < nz; ++k) vals[k] = conv(zs[k]);
        GridDensity g(zs, std::move(vals));
        const double target =
            std::max(table.p(i, j) - (i == j ? table.atom_weight[i] : 0.0),
                     0.0);
        const double raw = g.smooth_mass();
        if (raw > 1e-300)
          g.scale_values(target / raw);
        g_smooth.push_back(std::move(g));
      }
    }
    return std::make_shared<const Entry>(
        Entry{std::move(table), s, std::move(g_smooth)});
  }

  std::shared_ptr<const Entry> tables(double h) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(h);
    if (it != cache_.end()) return it->second;
    std::shared_ptr<const Entry> e = make_entry(solve_density_system(
        model_, h, PdeGrid::standard(model_, h, nx_, cfl_, pad_)));
    cache_.emplace(h, e);
    return e;
  }

  ModelSpec model_;
  double sigma_;
  std::size_t nx_;
  double cfl_, pad_;
  mutable std::mutex mu_;
  mutable std::map<double, std::shared_ptr<const Entry>> cache_;
};

inline PdeProvider build_provider(DensityTable table, double sigma) {
  return PdeProvider(std::move(table), sigma);
}

}  // namespace ctfilter
