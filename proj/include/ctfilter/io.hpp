#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "ctfilter/ctmc.hpp"
#include "ctfilter/error.hpp"
#include "ctfilter/filter.hpp"
#include "ctfilter/model.hpp"
#include "ctfilter/pde.hpp"
#include "ctfilter/sim.hpp"
#include "json.hpp"

namespace ctfilter {

inline constexpr const char* kLibraryVersion = "1.0.0";

namespace io {

/* Shortest decimal form that parses back to the same double; keeps every
   emitted file byte-stable across runs. */
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size())
      fail(ErrorCode::IoError, "trailing characters in number '" + s + "'");
    return x;
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::IoError, "expected a number, got '" + s + "'");
  } catch (const std::out_of_range&) {
    fail(ErrorCode::IoError, "number out of range: '" + s + "'");
  }
}

inline long long parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(s, &used);
    if (used != s.size())
      fail(ErrorCode::IoError, "trailing characters in integer '" + s + "'");
    return x;
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::IoError, "expected an integer, got '" + s + "'");
  } catch (const std::out_of_range&) {
    fail(ErrorCode::IoError, "integer out of range: '" + s + "'");
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  return f;
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot open '" + path + "' for reading");
  return f;
}

}  // namespace io

/* ---- scenario configuration ------------------------------------------- */

/* JSON form of a Scenario: {alpha, Q, p0, sigma, T, n_obs, seed, stride}.
   Validation runs through the model/scenario constructors so diagnostics
   match the library's own error taxonomy. */
inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["alpha"] = sc.model.alphas();
  std::vector<std::vector<double>> q(sc.model.dim());
  for (std::size_t i = 0; i < sc.model.dim(); ++i) {
    q[i].resize(sc.model.dim());
    for (std::size_t k = 0; k < sc.model.dim(); ++k)
      q[i][k] = sc.model.generator()(i, k);
  }
  j["Q"] = q;
  j["p0"] = sc.model.initial().vec();
  j["sigma"] = sc.model.sigma();
  j["T"] = sc.horizon;
  j["n_obs"] = sc.n_obs;
  j["seed"] = sc.seed;
  j["stride"] = sc.stride;
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  for (const char* key : {"alpha", "Q", "p0", "sigma", "T", "n_obs", "seed"})
    if (!j.contains(key))
      fail(ErrorCode::InvalidConfig,
           std::string("config is missing required field '") + key + "'");
  try {
    const Vector alphas = j.at("alpha").get<Vector>();
    const auto rows = j.at("Q").get<std::vector<std::vector<double>>>();
    const std::size_t d = rows.size();
    Matrix q(d, d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (rows[i].size() != d)
        fail(ErrorCode::ShapeError, "Q must be a square matrix");
      for (std::size_t k = 0; k < d; ++k) q(i, k) = rows[i][k];
    }
    ModelSpec model(alphas, GeneratorMatrix::validated(std::move(q)),
                    Distribution(j.at("p0").get<Vector>()),
                    j.at("sigma").get<double>());
    return Scenario(std::move(model), j.at("T").get<double>(),
                    j.at("n_obs").get<std::size_t>(),
                    j.at("seed").get<std::uint64_t>(),
                    j.value("stride", std::size_t{1}));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig,
         std::string("config field has the wrong type: ") + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) {
  auto f = io::open_for_read(path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig,
         "config '" + path + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

/* ---- observation series ------------------------------------------------ */

/* CSV columns k, t, dZ, Z (+ true_state, true_J when the truth is kept),
   one row per observation.  States are written 1-based to line up with the
   map_state column of the posterior CSV.  The initial-time truth and the
   seed live in a JSON sidecar at <path>.meta.json, since row k = 0 has no
   increment. */
inline void write_observations(const std::string& path,
                               const ObservationSeries& obs, bool with_truth) {
  if (with_truth && !obs.has_truth())
    fail(ErrorCode::InvalidConfig,
         "observation series carries no truth to write");
  auto f = io::open_for_write(path);
  f << "k,t,dZ,Z";
  if (with_truth) f << ",true_state,true_J";
  f << "\n";
  for (std::size_t k = 1; k <= obs.size(); ++k) {
    f << k << ',' << io::format_double(static_cast<double>(k) * obs.h) << ','
      << io::format_double(obs.increments[k - 1]) << ','
      << io::format_double(obs.cumulative[k - 1]);
    if (with_truth)
      f << ',' << obs.true_states[k] + 1 << ','
        << io::format_double(obs.true_j[k]);
    f << "\n";
  }

  nlohmann::json meta;
  meta["version"] = kLibraryVersion;
  meta["h"] = obs.h;
  meta["n"] = obs.size();
  meta["seed"] = obs.seed;
  if (with_truth) {
    meta["true_state_0"] = obs.true_states[0] + 1;
    meta["true_j_0"] = obs.true_j[0];
  }
  auto m = io::open_for_write(path + ".meta.json");
  m << meta.dump(2) << "\n";
}

inline ObservationSeries read_observations(const std::string& path) {
  auto f = io::open_for_read(path);
  std::string line;
  if (!std::getline(f, line))
    fail(ErrorCode::IoError, "observation file '" + path + "' is empty");
  const auto header = io::split_csv_line(line);
  const bool with_truth = header.size() == 6;
  if (header.size() != 4 && header.size() != 6)
    fail(ErrorCode::IoError,
         "observation header must have 4 or 6 columns, got " +
             std::to_string(header.size()));
  if (header[0] != "k" || header[1] != "t" || header[2] != "dZ" ||
      header[3] != "Z")
    fail(ErrorCode::IoError, "unexpected observation header '" + line + "'");

  ObservationSeries obs;
  std::vector<std::size_t> states;
  std::vector<double> js;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = io::split_csv_line(line);
    if (fields.size() != header.size())
      fail(ErrorCode::IoError, "ragged observation row '" + line + "'");
    obs.increments.push_back(io::parse_double(fields[2]));
    obs.cumulative.push_back(io::parse_double(fields[3]));
    if (with_truth) {
      const long long s = io::parse_int(fields[4]);
      if (s < 1) fail(ErrorCode::IoError, "state labels are 1-based");
      states.push_back(static_cast<std::size_t>(s - 1));
      js.push_back(io::parse_double(fields[5]));
    }
    if (obs.increments.size() == 1) obs.h = io::parse_double(fields[1]);
  }
  if (obs.increments.empty())
    fail(ErrorCode::IoError, "observation file '" + path + "' has no rows");

  std::ifstream meta_in(path + ".meta.json");
  if (meta_in) {
    nlohmann::json meta;
    try {
      meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::IoError,
           "sidecar '" + path + ".meta.json' is not valid JSON: " + e.what());
    }
    if (meta.contains("h")) obs.h = meta["h"].get<double>();
    if (meta.contains("seed")) obs.seed = meta["seed"].get<std::uint64_t>();
    if (with_truth) {
      if (!meta.contains("true_state_0"))
        fail(ErrorCode::IoError,
             "truth columns present but the sidecar lacks the initial state");
      const auto s0 = meta["true_state_0"].get<long long>();
      if (s0 < 1) fail(ErrorCode::IoError, "state labels are 1-based");
      obs.true_states.push_back(static_cast<std::size_t>(s0 - 1));
      obs.true_j.push_back(meta["true_j_0"].get<double>());
    }
  } else if (with_truth) {
    fail(ErrorCode::IoError,
         "reading truth columns requires the sidecar '" + path +
             ".meta.json' for the initial state");
  }
  obs.true_states.insert(obs.true_states.end(), states.begin(), states.end());
  obs.true_j.insert(obs.true_j.end(), js.begin(), js.end());
  return obs;
}

/* Block-sum every `stride` consecutive increments into one (the tail that
   does not fill a block is dropped), subsampling the truth to the block
   boundaries.  Increment sums are exact, so filtering the strided series
   equals filtering the original with the same stride. */
inline ObservationSeries strided_series(const ObservationSeries& obs,
                                        std::size_t stride) {
  if (stride < 1) fail(ErrorCode::InvalidConfig, "stride must be >= 1");
  if (stride == 1) return obs;
  ObservationSeries out;
  out.h = static_cast<double>(stride) * obs.h;
  out.seed = obs.seed;
  const std::size_t n = obs.size() / stride;
  for (std::size_t m = 1; m <= n; ++m) {
    double dz = 0.0;
    for (std::size_t r = (m - 1) * stride; r < m * stride; ++r)
      dz += obs.increments[r];
    out.increments.push_back(dz);
    out.cumulative.push_back(obs.cumulative[m * stride - 1]);
  }
  if (obs.has_truth()) {
    for (std::size_t m = 0; m <= n; ++m) {
      out.true_states.push_back(obs.true_states[m * stride]);
      out.true_j.push_back(obs.true_j[m * stride]);
    }
  }
  return out;
}

/* ---- posterior trajectories -------------------------------------------- */

/* CSV columns t, mu_1..mu_d, state_index_mean, alpha_mean, map_state,
   degenerate_flag, method; one row per filter state including the initial
   law at t = 0. */
inline void write_posterior_csv(const std::string& path,
                                const FilterTrajectory& traj,
                                const Vector& alphas,
                                const std::string& method) {
  auto f = io::open_for_write(path);
  const std::size_t d = alphas.size();
  f << "t";
  for (std::size_t i = 1; i <= d; ++i) f << ",mu_" << i;
  f << ",state_index_mean,alpha_mean,map_state,degenerate_flag,method\n";
  for (const FilterState& s : traj.states) {
    const StepSummary sum = summarize_state(s, alphas);
    f << io::format_double(s.t);
    for (std::size_t i = 0; i < d; ++i)
      f << ',' << io::format_double(s.mu[i]);
    f << ',' << io::format_double(sum.state_index_mean) << ','
      << io::format_double(sum.alpha_mean) << ',' << sum.map_state << ','
      << (s.degenerate ? 1 : 0) << ',' << method << "\n";
  }
}

/* JSON sidecar with the per-step wall times of a filter run. */
inline void write_timing_json(const std::string& path,
                              const FilterTrajectory& traj,
                              const std::string& method, double h,
                              const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["version"] = kLibraryVersion;
  j["method"] = method;
  j["h"] = h;
  j["steps"] = traj.steps();
  j["mean_step_seconds"] = detail::mean_or_zero(traj.step_seconds);
  j["step_seconds"] = traj.step_seconds;
  j["config"] = config_echo;
  auto f = io::open_for_write(path);
  f << j.dump(2) << "\n";
}

/* Generic provenance sidecar: every CSV artifact gets a <path>.meta.json
   recording the producing command, the scenario, and the library version. */
inline void write_meta_sidecar(
    const std::string& path, const std::string& command,
    const nlohmann::json& config_echo,
    nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json meta = std::move(extra);
  meta["version"] = kLibraryVersion;
  meta["command"] = command;
  meta["config"] = config_echo;
  auto f = io::open_for_write(path + ".meta.json");
  f << meta.dump(2) << "\n";
}

/* ---- transport-table cache --------------------------------------------- */

/* Versioned CSV dump of a solved density table: '#'-prefixed metadata lines
   (model, grid, atoms, transition matrix, mass diagnostics), then one row
   per grid node with the smooth values of every state pair. */
inline void write_density_table(const std::string& path,
                                const DensityTable& table, double sigma) {
  auto f = io::open_for_write(path);
  const std::size_t d = table.dim();
  auto join = [](const Vector& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += io::format_double(v[i]);
    }
    return s;
  };
  f << "# ctfilter-pde-table v1\n";
  f << "# d," << d << "\n";
  f << "# alpha," << join(table.model.alphas()) << "\n";
  f << "# p0," << join(table.model.initial().vec()) << "\n";
  Vector q;
  q.reserve(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      q.push_back(table.model.generator()(i, j));
  f << "# Q," << join(q) << "\n";
  f << "# sigma," << io::format_double(sigma) << "\n";
  f << "# h," << io::format_double(table.h) << "\n";
  f << "# grid," << io::format_double(table.grid.x_min) << ','
    << io::format_double(table.grid.x_max) << ',' << table.grid.nx << ','
    << table.grid.nt << "\n";
  f << "# atom_weight," << join(table.atom_weight) << "\n";
  f << "# atom_pos," << join(table.atom_pos) << "\n";
  Vector p;
  p.reserve(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) p.push_back(table.p(i, j));
  f << "# p," << join(p) << "\n";
  f << "# diag," << io::format_double(table.mass_error_mid) << ','
    << io::format_double(table.mass_error_final) << ','
    << io::format_double(table.boundary_loss) << "\n";
  f << "x";
  for (std::size_t i = 1; i <= d; ++i)
    for (std::size_t j = 1; j <= d; ++j) f << ",f_" << i << "_" << j;
  f << "\n";
  for (std::size_t m = 0; m < table.xs.size(); ++m) {
    f << io::format_double(table.xs[m]);
    for (std::size_t pair = 0; pair < d * d; ++pair)
      f << ',' << io::format_double(table.smooth[pair][m]);
    f << "\n";
  }
}

struct StoredDensityTable {
  DensityTable table;
  double sigma;
};

inline StoredDensityTable read_density_table(const std::string& path) {
  auto f = io::open_for_read(path);
  std::string line;
  if (!std::getline(f, line) || line != "# ctfilter-pde-table v1")
    fail(ErrorCode::IoError,
         "'" + path + "' is not a version-1 density table dump");

  std::map<std::string, std::vector<std::string>> meta;
  while (f.peek() == '#' && std::getline(f, line)) {
    auto fields = io::split_csv_line(line.substr(2));
    if (fields.empty()) fail(ErrorCode::IoError, "empty metadata line");
    const std::string key = fields.front();
    fields.erase(fields.begin());
    meta[key] = std::move(fields);
  }
  auto need = [&](const std::string& key) -> const std::vector<std::string>& {
    auto it = meta.find(key);
    if (it == meta.end())
      fail(ErrorCode::IoError, "table dump is missing the '" + key + "' line");
    return it->second;
  };
  auto as_vector = [&](const std::string& key, std::size_t n) {
    const auto& fields = need(key);
    if (fields.size() != n)
      fail(ErrorCode::IoError, "'" + key + "' line has the wrong arity");
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = io::parse_double(fields[i]);
    return v;
  };

  const std::size_t d =
      static_cast<std::size_t>(io::parse_int(need("d").at(0)));
  if (d < 2) fail(ErrorCode::IoError, "table dump needs at least 2 states");
  const Vector alphas = as_vector("alpha", d);
  const Vector p0 = as_vector("p0", d);
  const Vector qflat = as_vector("Q", d * d);
  Matrix q(d, d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) q(i, j) = qflat[i * d + j];
  const double sigma = io::parse_double(need("sigma").at(0));
  ModelSpec model(alphas, GeneratorMatrix::validated(std::move(q)),
                  Distribution(p0), sigma);
  const double h = io::parse_double(need("h").at(0));

  const auto& gfields = need("grid");
  if (gfields.size() != 4)
    fail(ErrorCode::IoError, "'grid' line has the wrong arity");
  PdeGrid grid;
  grid.x_min = io::parse_double(gfields[0]);
  grid.x_max = io::parse_double(gfields[1]);
  grid.nx = static_cast<std::size_t>(io::parse_int(gfields[2]));
  grid.nt = static_cast<std::size_t>(io::parse_int(gfields[3]));

  const Vector atom_weight = as_vector("atom_weight", d);
  const Vector atom_pos = as_vector("atom_pos", d);
  const Vector pflat = as_vector("p", d * d);
  Matrix praw(d, d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) praw(i, j) = pflat[i * d + j];
  const Vector diag = as_vector("diag", 3);

  if (!std::getline(f, line))
    fail(ErrorCode::IoError, "table dump has no value rows");
  const auto header = io::split_csv_line(line);
  if (header.size() != 1 + d * d || header[0] != "x")
    fail(ErrorCode::IoError, "unexpected value header '" + line + "'");

  Vector xs;
  std::vector<Vector> smooth(d * d);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = io::split_csv_line(line);
    if (fields.size() != 1 + d * d)
      fail(ErrorCode::IoError, "ragged value row '" + line + "'");
    xs.push_back(io::parse_double(fields[0]));
    for (std::size_t pair = 0; pair < d * d; ++pair)
      smooth[pair].push_back(io::parse_double(fields[pair + 1]));
  }
  if (xs.size() != grid.nx)
    fail(ErrorCode::IoError,
         "value rows (" + std::to_string(xs.size()) +
             ") do not match the grid size (" + std::to_string(grid.nx) + ")");

  DensityTable table{std::move(model),
                     h,
                     grid,
                     StochasticMatrix::validated(std::move(praw)),
                     std::move(xs),
                     std::move(smooth),
                     atom_weight,
                     atom_pos,
                     diag[0],
                     diag[1],
                     diag[2]};
  return StoredDensityTable{std::move(table), sigma};
}

}  // namespace ctfilter
