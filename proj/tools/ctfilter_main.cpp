// Command-line harness: simulate observation series, run and compare the
// filtering methods, dump increment densities and transport tables.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 model/method
// capability mismatch, 4 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "ctfilter/filter.hpp"
#include "ctfilter/io.hpp"
#include "ctfilter/lattice.hpp"
#include "ctfilter/pde.hpp"
#include "ctfilter/sim.hpp"
#include "ctfilter/telegraph.hpp"
#include "ctfilter/wonham.hpp"

namespace {

using namespace ctfilter;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCapability = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config:
      return kExitConfig;
    case ErrorKind::Capability:
      return kExitCapability;
    case ErrorKind::Numeric:
      return kExitNumeric;
  }
  return kExitNumeric;
}

/* Options shared by every subcommand that needs a scenario: either a
   preset name (five-state takes the sigma override) or a JSON config. */
struct ScenarioOpts {
  std::string preset_name;
  std::string config_path;
  double sigma = 1.0;

  void attach(CLI::App* cmd) {
    auto* p = cmd->add_option("--preset", preset_name,
                              "built-in scenario (two-state | five-state)");
    auto* c = cmd->add_option("--config", config_path,
                              "scenario JSON "
                              "{alpha,Q,p0,sigma,T,n_obs,seed,stride}");
    cmd->add_option("--sigma", sigma,
                    "noise level for --preset (five-state uses 1 or 2)")
        ->check(CLI::PositiveNumber);
    p->excludes(c);
    c->excludes(p);
  }

  Scenario resolve() const {
    if (!config_path.empty()) return load_scenario(config_path);
    if (!preset_name.empty()) return preset(preset_name, sigma);
    fail(ErrorCode::InvalidConfig, "need --preset or --config");
  }
};

const std::vector<std::string> kFilterMethods = {"exact", "quasi", "milstein",
                                                 "pde", "lattice"};

/* A filtering method bound to a scenario: providers for the density-driven
   recursion, dedicated drivers for the Zakai discretizations. */
struct BoundMethod {
  std::string name;
  std::shared_ptr<const DensityProvider> provider;  // null for quasi/milstein
};

BoundMethod bind_method(const std::string& method, const Scenario& sc,
                        std::size_t lattice_steps,
                        const std::string& pde_table_path) {
  const ModelSpec& m = sc.model;
  if (method == "exact") {
    if (m.dim() != 2)
      fail(ErrorCode::UnsupportedModel, "exact filter requires two states");
    return {method, std::make_shared<ExactProvider>(m)};
  }
  if (method == "pde") {
    if (!pde_table_path.empty()) {
      StoredDensityTable stored = read_density_table(pde_table_path);
      if (stored.table.dim() != m.dim())
        fail(ErrorCode::InvalidConfig,
             "stored table dimension does not match the scenario");
      return {method, std::make_shared<PdeProvider>(std::move(stored.table),
                                                    stored.sigma)};
    }
    return {method, std::make_shared<PdeProvider>(m, m.sigma())};
  }
  if (method == "lattice") {
    if (lattice_steps < 1)
      fail(ErrorCode::InvalidConfig, "lattice requires --lattice-steps >= 1");
    return {method,
            std::make_shared<LatticeProvider>(m, m.sigma(), lattice_steps)};
  }
  if (method == "quasi" || method == "milstein") return {method, nullptr};
  fail(ErrorCode::InvalidConfig, "unknown method '" + method + "'");
}

FilterTrajectory run_method(const BoundMethod& bound,
                            const ObservationSeries& obs, const Scenario& sc) {
  if (bound.provider)
    return run_filter(obs, *bound.provider, sc.model.initial());
  if (bound.name == "quasi")
    return quasi_filter(obs, sc.model, sc.model.initial(),
                        QuasiMode::Stepwise);
  return milstein_filter(obs, sc.model, sc.model.initial());
}

/* ---- simulate ---------------------------------------------------------- */

struct SimulateOpts {
  ScenarioOpts scenario;
  std::string out;
  bool truth = false;
};

int cmd_simulate(const SimulateOpts& opt) {
  const Scenario sc = opt.scenario.resolve();
  const ObservationSeries obs = simulate_observations(sc);
  write_observations(opt.out, obs, opt.truth);
  std::printf("wrote %zu observations (h=%s) to %s\n", obs.size(),
              io::format_double(obs.h).c_str(), opt.out.c_str());
  return kExitOk;
}

/* ---- filter ------------------------------------------------------------ */

struct FilterOpts {
  ScenarioOpts scenario;
  std::string obs_path;
  std::string method;
  std::string out;
  std::string timing_out;
  std::string pde_table;
  std::size_t lattice_steps = 4;
  std::size_t stride = 0;  // 0: take the scenario's stride
};

int cmd_filter(const FilterOpts& opt) {
  const Scenario sc = opt.scenario.resolve();
  const ObservationSeries raw = opt.obs_path.empty()
                                    ? simulate_observations(sc)
                                    : read_observations(opt.obs_path);
  const std::size_t stride = opt.stride > 0 ? opt.stride : sc.stride;
  const ObservationSeries obs = strided_series(raw, stride);
  const BoundMethod bound =
      bind_method(opt.method, sc, opt.lattice_steps, opt.pde_table);
  const FilterTrajectory traj = run_method(bound, obs, sc);
  write_posterior_csv(opt.out, traj, sc.model.alphas(), bound.name);
  const std::string timing_path =
      opt.timing_out.empty() ? opt.out + ".timing.json" : opt.timing_out;
  write_timing_json(timing_path, traj, bound.name, obs.h,
                    scenario_to_json(sc));
  std::printf("wrote %zu posterior states to %s (timing: %s)\n", traj.size(),
              opt.out.c_str(), timing_path.c_str());
  return kExitOk;
}

/* ---- compare ----------------------------------------------------------- */

struct CompareOpts {
  ScenarioOpts scenario;
  std::string obs_path;
  std::vector<std::string> methods;
  std::string report;
  std::string posteriors_out;
  std::string pde_table;
  std::size_t lattice_steps = 4;
  std::size_t stride = 0;  // 0: take the scenario's stride
};

int cmd_compare(const CompareOpts& opt) {
  const Scenario sc = opt.scenario.resolve();

  std::vector<std::string> methods;
  for (const std::string& m : opt.methods) {
    if (std::find(methods.begin(), methods.end(), m) != methods.end()) {
      std::fprintf(stderr, "warning: method '%s' listed twice, ignoring\n",
                   m.c_str());
      continue;
    }
    methods.push_back(m);
  }
  if (methods.size() < 2)
    fail(ErrorCode::InvalidConfig, "compare needs at least two methods");

  const ObservationSeries raw = opt.obs_path.empty()
                                    ? simulate_observations(sc)
                                    : read_observations(opt.obs_path);
  const std::size_t stride = opt.stride > 0 ? opt.stride : sc.stride;
  const ObservationSeries obs = strided_series(raw, stride);

  std::vector<FilterTrajectory> trajs;
  trajs.reserve(methods.size());
  for (const std::string& m : methods) {
    const BoundMethod bound =
        bind_method(m, sc, opt.lattice_steps, opt.pde_table);
    trajs.push_back(run_method(bound, obs, sc));
  }

  nlohmann::json report;
  report["version"] = kLibraryVersion;
  report["config"] = scenario_to_json(sc);
  report["h"] = obs.h;
  report["stride"] = stride;
  report["methods"] = methods;

  nlohmann::json pairwise = nlohmann::json::array();
  for (std::size_t a = 0; a < methods.size(); ++a)
    for (std::size_t b = a + 1; b < methods.size(); ++b) {
      double acc = 0.0;
      std::size_t cnt = 0;
      for (std::size_t k = 0; k < trajs[a].size(); ++k)
        for (std::size_t i = 0; i < sc.model.dim(); ++i) {
          acc += std::abs(trajs[a].states[k].mu[i] - trajs[b].states[k].mu[i]);
          ++cnt;
        }
      pairwise.push_back({{"a", methods[a]},
                          {"b", methods[b]},
                          {"mean_abs_diff", acc / static_cast<double>(cnt)}});
    }
  report["pairwise"] = pairwise;

  nlohmann::json per_method = nlohmann::json::array();
  for (std::size_t a = 0; a < methods.size(); ++a) {
    nlohmann::json entry;
    entry["method"] = methods[a];
    entry["mean_step_seconds"] =
        ctfilter::detail::mean_or_zero(trajs[a].step_seconds);
    if (obs.has_truth()) {
      double sq = 0.0;
      std::size_t hits = 0;
      const auto summaries = summarize(trajs[a], sc.model.alphas());
      for (std::size_t k = 0; k < summaries.size(); ++k) {
        const double true_index = static_cast<double>(obs.true_states[k] + 1);
        sq += (summaries[k].state_index_mean - true_index) *
              (summaries[k].state_index_mean - true_index);
        if (summaries[k].map_state == obs.true_states[k] + 1) ++hits;
      }
      entry["rmse_vs_truth"] =
          std::sqrt(sq / static_cast<double>(summaries.size()));
      entry["map_accuracy"] = static_cast<double>(hits) /
                              static_cast<double>(summaries.size());
    }
    per_method.push_back(entry);
  }
  report["per_method"] = per_method;

  auto f = io::open_for_write(opt.report);
  f << report.dump(2) << "\n";

  const std::string long_path = opt.posteriors_out.empty()
                                    ? opt.report + ".posteriors.csv"
                                    : opt.posteriors_out;
  auto p = io::open_for_write(long_path);
  p << "method,t,state,mu\n";
  for (std::size_t a = 0; a < methods.size(); ++a)
    for (const FilterState& s : trajs[a].states)
      for (std::size_t i = 0; i < sc.model.dim(); ++i)
        p << methods[a] << ',' << io::format_double(s.t) << ',' << (i + 1)
          << ',' << io::format_double(s.mu[i]) << "\n";
  write_meta_sidecar(long_path, "compare", scenario_to_json(sc),
                     {{"report", opt.report}});

  std::printf("wrote comparison report to %s (posteriors: %s)\n",
              opt.report.c_str(), long_path.c_str());
  return kExitOk;
}

/* ---- densities --------------------------------------------------------- */

struct DensitiesOpts {
  ScenarioOpts scenario;
  std::string method = "exact";
  double h = 0.2;
  std::vector<double> grid;
  std::string out;
  std::string pde_table;
  std::size_t lattice_steps = 4;
};

int cmd_densities(const DensitiesOpts& opt) {
  const Scenario sc = opt.scenario.resolve();
  if (opt.method != "exact" && opt.method != "pde" && opt.method != "lattice")
    fail(ErrorCode::InvalidConfig,
         "densities supports methods exact, pde, lattice");
  if (opt.grid.size() != 3)
    fail(ErrorCode::InvalidConfig, "--grid needs zmin,zmax,n");
  const double z_min = opt.grid[0], z_max = opt.grid[1];
  const auto n = static_cast<long long>(opt.grid[2]);
  if (!(z_max > z_min))
    fail(ErrorCode::InvalidConfig, "--grid needs zmax > zmin");
  if (n < 10)
    fail(ErrorCode::GridTooCoarse, "--grid needs at least 10 points");

  const BoundMethod bound =
      bind_method(opt.method, sc, opt.lattice_steps, opt.pde_table);
  const DensityProvider& g = *bound.provider;
  const std::size_t d = sc.model.dim();

  auto f = io::open_for_write(opt.out);
  f << "z";
  for (std::size_t i = 1; i <= d; ++i) f << ",g" << i;
  for (std::size_t i = 1; i <= d; ++i)
    for (std::size_t j = 1; j <= d; ++j) f << ",g" << i << j;
  f << "\n";
  for (long long k = 0; k < n; ++k) {
    const double z =
        z_min + (z_max - z_min) * static_cast<double>(k) /
                    static_cast<double>(n - 1);
    f << io::format_double(z);
    for (std::size_t i = 0; i < d; ++i)
      f << ',' << io::format_double(g.g_marginal(i, z, opt.h));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        f << ',' << io::format_double(g.g_conditional(i, j, z, opt.h));
    f << "\n";
  }

  if (opt.method == "lattice") {
    const auto& lat = dynamic_cast<const LatticeProvider&>(g);
    auto mf = io::open_for_write(opt.out + ".mixtures.csv");
    mf << "kind,i,j,mean,weight\n";
    for (std::size_t i = 0; i < d; ++i) {
      const GaussianMixture& mix = lat.marginal(i, opt.h);
      for (std::size_t c = 0; c < mix.size(); ++c)
        mf << "marginal," << (i + 1) << ",," << io::format_double(mix.means[c])
           << ',' << io::format_double(mix.weights[c]) << "\n";
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const GaussianMixture& mix = lat.conditional(i, j, opt.h);
        for (std::size_t c = 0; c < mix.size(); ++c)
          mf << "conditional," << (i + 1) << ',' << (j + 1) << ','
             << io::format_double(mix.means[c]) << ','
             << io::format_double(mix.weights[c]) << "\n";
      }
    std::printf("wrote densities to %s (+ %s.mixtures.csv)\n",
                opt.out.c_str(), opt.out.c_str());
  } else {
    std::printf("wrote densities to %s\n", opt.out.c_str());
  }
  nlohmann::json extra{{"method", opt.method},
                       {"h", opt.h},
                       {"grid", opt.grid}};
  if (opt.method == "lattice") {
    extra["lattice_steps"] = opt.lattice_steps;
    extra["mixtures"] = opt.out + ".mixtures.csv";
  }
  write_meta_sidecar(opt.out, "densities", scenario_to_json(sc), extra);
  return kExitOk;
}

/* ---- pde-table --------------------------------------------------------- */

struct PdeTableOpts {
  ScenarioOpts scenario;
  double h = 0.02;
  std::size_t nx = 1201;
  double cfl = 0.8;
  std::string out;
};

int cmd_pde_table(const PdeTableOpts& opt) {
  const Scenario sc = opt.scenario.resolve();
  const PdeGrid grid = PdeGrid::standard(sc.model, opt.h, opt.nx, opt.cfl);
  const DensityTable table = solve_density_system(sc.model, opt.h, grid);
  write_density_table(opt.out, table, sc.model.sigma());
  write_meta_sidecar(opt.out, "pde-table", scenario_to_json(sc),
                     {{"h", opt.h}, {"nx", opt.nx}, {"cfl", opt.cfl}});
  std::printf(
      "wrote %zux%zu table (h=%s, mass error %.2e, boundary loss %.2e) "
      "to %s\n",
      table.xs.size(), sc.model.dim() * sc.model.dim(),
      io::format_double(opt.h).c_str(), table.mass_error_final,
      table.boundary_loss, opt.out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Filters for a hidden continuous-time Markov chain observed through "
      "its noisy drift integral"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  // the observation gap is spelled --h, so help must not claim -h
  app.set_help_flag("--help", "print usage and exit");
  auto add_subcommand = [&app](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->set_help_flag("--help", "print usage and exit");
    return sub;
  };

  SimulateOpts sim_opt;
  auto* sim_cmd = add_subcommand(
      "simulate", "sample a chain path and write noisy increment rows");
  sim_opt.scenario.attach(sim_cmd);
  sim_cmd->add_option("--out", sim_opt.out, "observation CSV path")
      ->required();
  sim_cmd->add_flag("--truth", sim_opt.truth,
                    "include true_state/true_J columns");

  FilterOpts fil_opt;
  auto* fil_cmd = add_subcommand(
      "filter", "run one filtering method over an observation series");
  fil_opt.scenario.attach(fil_cmd);
  fil_cmd->add_option("--obs", fil_opt.obs_path,
                      "observation CSV (default: simulate from the scenario)");
  fil_cmd
      ->add_option("--method", fil_opt.method,
                   "exact | quasi | milstein | pde | lattice")
      ->required();
  fil_cmd->add_option("--lattice-steps", fil_opt.lattice_steps,
                      "sub-steps per observation gap for --method lattice");
  fil_cmd->add_option("--stride", fil_opt.stride,
                      "use only every k-th measurement");
  fil_cmd->add_option("--pde-table", fil_opt.pde_table,
                      "stored density table for --method pde");
  fil_cmd->add_option("--out", fil_opt.out, "posterior CSV path")->required();
  fil_cmd->add_option("--timing-out", fil_opt.timing_out,
                      "timing JSON path (default <out>.timing.json)");

  CompareOpts cmp_opt;
  auto* cmp_cmd = add_subcommand(
      "compare", "run several methods on one series and report differences");
  cmp_opt.scenario.attach(cmp_cmd);
  cmp_cmd->add_option("--obs", cmp_opt.obs_path,
                      "observation CSV (default: simulate from the scenario)");
  cmp_cmd
      ->add_option("--methods", cmp_opt.methods,
                   "two or more of exact, quasi, milstein, pde, lattice")
      ->required()
      ->delimiter(',');
  cmp_cmd->add_option("--report", cmp_opt.report, "report JSON path")
      ->required();
  cmp_cmd->add_option("--posteriors", cmp_opt.posteriors_out,
                      "long-format posterior CSV "
                      "(default <report>.posteriors.csv)");
  cmp_cmd->add_option("--lattice-steps", cmp_opt.lattice_steps,
                      "sub-steps for the lattice method");
  cmp_cmd->add_option("--stride", cmp_opt.stride,
                      "use only every k-th measurement");
  cmp_cmd->add_option("--pde-table", cmp_opt.pde_table,
                      "stored density table for the pde method");

  DensitiesOpts den_opt;
  auto* den_cmd = add_subcommand(
      "densities", "dump increment densities g_i and g_ij on a z-grid");
  den_opt.scenario.attach(den_cmd);
  den_cmd->add_option("--method", den_opt.method, "exact | pde | lattice");
  den_cmd->add_option("--h", den_opt.h, "observation gap")->required();
  den_cmd
      ->add_option("--grid", den_opt.grid, "zmin,zmax,n evaluation grid")
      ->required()
      ->delimiter(',')
      ->expected(3);
  den_cmd->add_option("--out", den_opt.out, "density CSV path")->required();
  den_cmd->add_option("--lattice-steps", den_opt.lattice_steps,
                      "sub-steps for the lattice method");
  den_cmd->add_option("--pde-table", den_opt.pde_table,
                      "stored density table for the pde method");

  PdeTableOpts tab_opt;
  auto* tab_cmd = add_subcommand(
      "pde-table", "solve the transport system and store the density table");
  tab_opt.scenario.attach(tab_cmd);
  tab_cmd->add_option("--h", tab_opt.h, "observation gap")->required();
  tab_cmd->add_option("--nx", tab_opt.nx, "spatial grid points");
  tab_cmd->add_option("--cfl", tab_opt.cfl, "CFL target in (0, 0.9]");
  tab_cmd->add_option("--out", tab_opt.out, "table CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim_opt);
    if (fil_cmd->parsed()) return cmd_filter(fil_opt);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_opt);
    if (den_cmd->parsed()) return cmd_densities(den_opt);
    if (tab_cmd->parsed()) return cmd_pde_table(tab_opt);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitConfig;
}
