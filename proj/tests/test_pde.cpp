#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ctfilter/pde.hpp"
#include "ctfilter/sim.hpp"
#include "ctfilter/telegraph.hpp"

using namespace ctfilter;

namespace {

ModelSpec frozen_model(Vector alphas, double sigma) {
  const std::size_t d = alphas.size();
  Matrix q(d, d, 0.0);
  return ModelSpec(std::move(alphas), GeneratorMatrix::validated(q),
                   Distribution(Vector(d, 1.0 / static_cast<double>(d))),
                   sigma);
}

/* Sup distance between two grid densities sampled over [lo, hi], excluding a
   relative margin at each end; also reports the oracle's peak. */
struct SupReport {
  double sup = 0.0;
  double peak = 0.0;
};

SupReport interior_sup(const GridDensity& got, const GridDensity& want,
                       double lo, double hi, double margin_fraction) {
  const double margin = margin_fraction * (hi - lo);
  SupReport r;
  for (int k = 0; k <= 800; ++k) {
    const double x =
        lo + margin + (hi - lo - 2.0 * margin) * static_cast<double>(k) / 800.0;
    r.sup = std::max(r.sup, std::abs(got.interpolate(x) - want.interpolate(x)));
    r.peak = std::max(r.peak, want.interpolate(x));
  }
  return r;
}

}  // namespace

TEST_CASE("transport grid construction") {
  const Scenario sc = preset("two-state");

  SECTION("standard grid pads the transport hull") {
    const PdeGrid g = PdeGrid::standard(sc.model, 0.02);
    // hull of {0} and {alpha_i h} = [-0.06, 0.02], padded by 5% of 0.08
    CHECK_THAT(g.x_min, Catch::Matchers::WithinAbs(-0.064, 1e-12));
    CHECK_THAT(g.x_max, Catch::Matchers::WithinAbs(0.024, 1e-12));
    CHECK(g.nx == 1201);
    CHECK(g.cfl(sc.model, 0.02) <= 0.8 + 1e-12);
    CHECK_NOTHROW(g.validate(sc.model, 0.02));
  }

  SECTION("production grid") {
    const PdeGrid g = PdeGrid::reference(0.02);
    CHECK(g.x_min == -5.0);
    CHECK(g.x_max == 5.0);
    CHECK(g.nx == 3000);
    CHECK(g.nt == 40);
    CHECK(PdeGrid::reference(1.0).nt == 2000);
    CHECK_THAT(g.cfl(sc.model, 0.02),
               Catch::Matchers::WithinAbs(0.45, 1e-3));
    CHECK_NOTHROW(g.validate(sc.model, 0.02));
  }

  SECTION("time grid too coarse for the transport speed") {
    PdeGrid g;
    g.x_min = -0.1;
    g.x_max = 0.1;
    g.nx = 201;
    g.nt = 1;
    try {
      g.validate(sc.model, 0.02);
      FAIL("expected a CFL refusal");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::GridTooCoarse);
      // dx = 1e-3, so nt must reach ceil(3 * 0.02 / (0.9e-3)) = 67
      CHECK(std::string(e.what()).find("67") != std::string::npos);
    }
  }

  SECTION("argument validation") {
    PdeGrid g = PdeGrid::standard(sc.model, 0.02);
    g.nx = 200;
    CHECK_THROWS_AS(g.validate(sc.model, 0.02), Error);
    PdeGrid shifted = PdeGrid::standard(sc.model, 0.02);
    shifted.x_min = 0.0;  // hull reaches -0.06
    CHECK_THROWS_AS(shifted.validate(sc.model, 0.02), Error);
    CHECK_THROWS_AS(PdeGrid::standard(sc.model, 0.0), Error);
    CHECK_THROWS_AS(PdeGrid::standard(sc.model, 0.02, 1201, 0.95), Error);
    CHECK_THROWS_AS(PdeGrid::reference(-1.0), Error);
  }
}

TEST_CASE("transport solve") {
  SECTION("mass accounting on the five-state model") {
    const Scenario sc = preset("five-state");
    const double h = sc.step();
    const DensityTable table =
        solve_density_system(sc.model, h, PdeGrid::standard(sc.model, h));
    CHECK(table.mass_error_mid <= 2e-3);
    CHECK(table.mass_error_final <= 2e-3);
    CHECK(table.boundary_loss < 1e-6);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK_THAT(table.atom_weight[i],
                 Catch::Matchers::WithinAbs(std::exp(-h), 1e-15));
      CHECK_THAT(table.atom_pos[i],
                 Catch::Matchers::WithinAbs(sc.model.alpha(i) * h, 1e-15));
      double column = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double mass = table.unconditional(i, j).mass();
        CHECK_THAT(mass, Catch::Matchers::WithinAbs(table.p(i, j), 2e-3));
        column += mass;
      }
      CHECK_THAT(column, Catch::Matchers::WithinAbs(1.0, 2e-3));
    }
  }

  SECTION("no switching leaves pure atoms") {
    const ModelSpec m = frozen_model(Vector{-1.0, 2.0}, 1.0);
    const DensityTable table =
        solve_density_system(m, 0.5, PdeGrid::standard(m, 0.5));
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(table.atom_weight[i] == 1.0);
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK_THAT(table.p(i, j),
                   Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-15));
        for (double v : table.smooth_part(i, j)) CHECK(std::abs(v) <= 1e-15);
      }
    }
    CHECK_THROWS_AS(conditional_density(table, 0, 1), Error);
    try {
      conditional_density(table, 1, 0);
      FAIL("expected an unreachable-pair refusal");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnreachablePair);
    }
    const GridDensity diag = conditional_density(table, 0, 0);
    REQUIRE(diag.atom().has_value());
    CHECK(diag.atom()->weight == 1.0);
    CHECK_THAT(diag.atom()->location, Catch::Matchers::WithinAbs(-0.5, 1e-15));
  }

  SECTION("stiff reaction step is refused") {
    const Scenario sc = preset("two-state");
    PdeGrid wide;
    wide.x_min = -250.0;
    wide.x_max = 250.0;
    wide.nx = 201;
    wide.nt = 2;
    try {
      solve_density_system(sc.model, 0.8, wide);
      FAIL("expected an instability refusal");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SolverInstability);
    }
  }

  SECTION("mollified fallback conserves mass without atoms") {
    const Scenario sc = preset("two-state");
    const double h = 0.1;
    // The bump needs room: pad the x-range well past the transport hull so
    // its tails stay interior after riding the fastest drift to the edge.
    const PdeGrid grid = PdeGrid::standard(sc.model, h, 1201, 0.8, 0.3);
    const DensityTable table = solve_density_system(
        sc.model, h, grid, AtomMode::Mollified, 20.0 * grid.dx());
    CHECK(table.mass_error_final <= 2e-3);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(table.atom_weight[i] == 0.0);
      for (std::size_t j = 0; j < 2; ++j)
        CHECK_THAT(table.unconditional(i, j).mass(),
                   Catch::Matchers::WithinAbs(table.p(i, j), 2e-3));
    }
    CHECK_FALSE(conditional_density(table, 0, 0).atom().has_value());
    CHECK_THROWS_AS(solve_density_system(sc.model, h, grid,
                                         AtomMode::Mollified, 0.5 * grid.dx()),
                    Error);
    CHECK_THROWS_AS(
        solve_density_system(sc.model, h, grid, AtomMode::Mollified, 0.0),
        Error);
    // A grid padded only for the analytic-atom mode is refused: the bump's
    // tails would leak through the boundary.
    const PdeGrid tight = PdeGrid::standard(sc.model, h);
    try {
      solve_density_system(sc.model, h, tight, AtomMode::Mollified,
                           20.0 * tight.dx());
      FAIL("expected a margin refusal");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
    }
  }
}

TEST_CASE("two-state solve against the closed forms") {
  const Scenario sc = preset("two-state");
  const TwoStateParams tp = TwoStateParams::from_model(sc.model);
  const double h = 0.2;
  const double lo = std::min(tp.alpha1, tp.alpha2) * h;
  const double hi = std::max(tp.alpha1, tp.alpha2) * h;

  SECTION("conditional densities match within 1% of peak") {
    const DensityTable table =
        solve_density_system(sc.model, h, PdeGrid::standard(sc.model, h));
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        const GridDensity pde = conditional_density(table, i, j);
        const GridDensity exact = j_law_pair(tp, i, j, h, 4001);
        const SupReport r = interior_sup(pde, exact, lo, hi, 0.05);
        INFO("pair (" << i << "," << j << "): sup " << r.sup << " peak "
                      << r.peak);
        CHECK(r.sup <= 1e-2 * r.peak);
      }
    }
    // no-switch weight e^{-lambda_1 h} survives the solve untouched and the
    // conditional one divides by p_11(h)
    CHECK_THAT(table.atom_weight[0],
               Catch::Matchers::WithinAbs(std::exp(-0.4), 1e-15));
    const GridDensity diag = conditional_density(table, 0, 0);
    REQUIRE(diag.atom().has_value());
    CHECK_THAT(diag.atom()->weight,
               Catch::Matchers::WithinAbs(std::exp(-0.4) / table.p(0, 0),
                                          1e-13));
  }

  SECTION("halving the cell size shrinks the error by at least 1.6x") {
    const DensityTable coarse = solve_density_system(
        sc.model, h, PdeGrid::standard(sc.model, h, 601));
    const DensityTable fine = solve_density_system(
        sc.model, h, PdeGrid::standard(sc.model, h, 1201));
    const GridDensity exact = j_law_pair(tp, 0, 1, h, 4001);
    const SupReport rc =
        interior_sup(conditional_density(coarse, 0, 1), exact, lo, hi, 0.05);
    const SupReport rf =
        interior_sup(conditional_density(fine, 0, 1), exact, lo, hi, 0.05);
    INFO("coarse sup " << rc.sup << ", fine sup " << rf.sup);
    CHECK(rc.sup >= 1.6 * rf.sup);
  }
}

TEST_CASE("tabulated density provider") {
  SECTION("no-switching diagonal is the pure observation kernel") {
    const ModelSpec m = frozen_model(Vector{-1.0, 2.0}, 0.7);
    const double h = 0.3;
    const PdeProvider prov(m, m.sigma());
    const double s = 0.7 * std::sqrt(h);
    for (double z = -1.5; z <= 2.1; z += 0.05) {
      CHECK_THAT(prov.g_conditional(0, 0, z, h),
                 Catch::Matchers::WithinAbs(gaussian_pdf(z + 0.3, s), 1e-8));
      CHECK_THAT(prov.g_marginal(1, z, h),
                 Catch::Matchers::WithinAbs(gaussian_pdf(z - 0.6, s), 1e-8));
    }
    CHECK_THROWS_AS(prov.g_conditional(0, 1, 0.0, h), Error);
  }

  SECTION("matches the exact two-state observation densities") {
    const Scenario sc = preset("two-state");
    const double h = 0.02;
    const PdeProvider prov = build_provider(
        solve_density_system(sc.model, h, PdeGrid::reference(h)),
        sc.model.sigma());
    const ExactProvider exact(sc.model);
    const double s = sc.model.sigma() * std::sqrt(h);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double sup = 0.0, peak = 0.0;
        for (double z = -0.06 - 8.0 * s; z <= 0.02 + 8.0 * s; z += s / 20.0) {
          sup = std::max(sup, std::abs(prov.g_conditional(i, j, z, h) -
                                       exact.g_conditional(i, j, z, h)));
          peak = std::max(peak, exact.g_conditional(i, j, z, h));
        }
        INFO("pair (" << i << "," << j << "): sup " << sup << " peak "
                      << peak);
        CHECK(sup <= 1e-2 * peak);
      }
    }
  }

  SECTION("conditional masses and the marginal assembly") {
    const Scenario sc = preset("five-state");
    const double h = sc.step();
    const PdeProvider prov(sc.model, sc.model.sigma());
    const double s = std::sqrt(h);
    const double dz = s / 30.0;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double mass = 0.0;
        for (double z = -0.5 - 8.0 * s; z <= 0.3 + 8.0 * s; z += dz)
          mass += prov.g_conditional(i, j, z, h) * dz;
        CHECK_THAT(mass, Catch::Matchers::WithinAbs(1.0, 2e-3));
      }
    }
    const StochasticMatrix p = prov.transition(h);
    for (double z : {-0.4, -0.1, 0.0, 0.05, 0.3}) {
      for (std::size_t i = 0; i < 5; ++i) {
        double assembled = 0.0;
        for (std::size_t j = 0; j < 5; ++j)
          assembled += p(i, j) * prov.g_conditional(i, j, z, h);
        CHECK_THAT(prov.g_marginal(i, z, h),
                   Catch::Matchers::WithinAbs(assembled,
                                              1e-12 * (1.0 + assembled)));
      }
    }
  }

  SECTION("transition probabilities come from the generator") {
    const Scenario sc = preset("two-state");
    const PdeProvider prov(sc.model, sc.model.sigma());
    const StochasticMatrix got = prov.transition(0.1);
    const StochasticMatrix want = transition_matrix(sc.model.generator(), 0.1);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK_THAT(got(i, j), Catch::Matchers::WithinAbs(want(i, j), 1e-14));
  }

  SECTION("tables are cached and seeded tables are reused") {
    const Scenario sc = preset("two-state");
    const PdeProvider fresh(sc.model, sc.model.sigma());
    const DensityTable* first = &fresh.table(0.05);
    CHECK(first == &fresh.table(0.05));
    CHECK(fresh.table(0.05).grid.nx == 1201);

    const PdeProvider seeded = build_provider(
        solve_density_system(sc.model, 0.02, PdeGrid::reference(0.02)),
        sc.model.sigma());
    CHECK(seeded.table(0.02).grid.nx == 3000);  // not rebuilt at the default
    CHECK(seeded.name() == "pde");
    CHECK(seeded.dim() == 2);
  }

  SECTION("argument validation") {
    const Scenario sc = preset("two-state");
    CHECK_THROWS_AS(PdeProvider(sc.model, 0.0), Error);
    const PdeProvider prov(sc.model, 1.0);
    CHECK_THROWS_AS(prov.transition(-0.1), Error);
    CHECK_THROWS_AS(prov.g_conditional(2, 0, 0.0, 0.1), Error);
    CHECK_THROWS_AS(prov.g_marginal(5, 0.0, 0.1), Error);
  }
}
