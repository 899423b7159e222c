#pragma once

// Configuration-driven runs: solve, pressure extraction and envelope checks,
// written to an output directory together with a JSON manifest.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "brodinger/bregman.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/generators.hpp"
#include "brodinger/io.hpp"
#include "brodinger/kinematics.hpp"
#include "brodinger/moser.hpp"
#include "brodinger/perturbation.hpp"
#include "brodinger/pressure.hpp"

namespace brodinger::experiment {

inline constexpr const char* kVersion = "0.1.0";

enum class ExitCode : int { success = 0, config_error = 2, not_converged = 3, validation_failed = 4 };

struct ExperimentConfig {
  int d = 1;
  int n = 32;
  int steps = 16;
  double nu = 0.2;
  double tol_marginal = 1e-11;
  int max_sweeps = 10000;
  std::uint64_t seed = 0;

  std::string gamma = "shear";  // reference | shear | product | file
  std::string gamma_file;
  double shear_amplitude = generators::ShearParams{}.amplitude;
  double shear_width = generators::ShearParams{}.width;

  std::string phi = "sine_bump";  // sine_bump | file
  std::string phi_file;
  double phi_amplitude = 0.4;
  int phi_mode = 1;
  double phi_t_lo = 0.2;
  double phi_t_hi = 0.8;

  std::string pressure = "momentum";  // momentum | dual
  std::vector<double> eps{4e-3, 1e-2, 2e-2};
  std::vector<double> convexity_eps{-2e-2, -1e-2, 0.0, 1e-2, 2e-2};
  double slack = 1e-6;
  bool parallel = true;

  std::string output = "out";
  bool plot = false;

  /// Key-value echo in parse order, used for the manifest.
  std::vector<std::pair<std::string, std::string>> raw;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline int to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != std::floor(x) || std::abs(x) > 1e9) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<int>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  return out;
}

inline void one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (v == a) return;
  std::string list;
  for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
  throw ConfigError("config: '" + key + "' must be one of " + list + ", got '" + v + "'");
}

}  // namespace detail

/// Range checks and file existence; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  need(c.d == 1 || c.d == 2, "d must be 1 or 2");
  need(c.n >= 4 && c.n % 2 == 0, "n must be even and at least 4");
  need(c.steps >= 4, "K must be at least 4");
  need(c.nu > 0.0, "nu must be positive");
  need(c.tol_marginal > 0.0, "tol_marginal must be positive");
  need(c.max_sweeps >= 1, "max_sweeps must be positive");
  need(c.shear_width > 0.0 && std::abs(c.shear_amplitude) < 0.5, "shear parameters out of range");
  need(c.phi_mode >= 1 && 2 * c.phi_mode < c.n, "phi_mode must lie in [1, n/2)");
  need(0.0 < c.phi_t_lo && c.phi_t_lo < c.phi_t_hi && c.phi_t_hi < 1.0, "need 0 < phi_t_lo < phi_t_hi < 1");
  need(c.slack >= 0.0, "slack must be nonnegative");
  need(!c.eps.empty(), "eps list is empty");
  for (double e : c.eps) need(e > 0.0, "eps entries must be positive");
  need(c.convexity_eps.size() >= 3 || c.convexity_eps.empty(), "convexity_eps needs at least three points");
  need(!c.output.empty(), "output directory is empty");
  if (c.gamma == "file") {
    need(!c.gamma_file.empty(), "gamma = file needs gamma_file");
    need(std::filesystem::exists(c.gamma_file), "gamma_file not found: " + c.gamma_file);
  }
  if (c.phi == "file") {
    need(!c.phi_file.empty(), "phi = file needs phi_file");
    need(std::filesystem::exists(c.phi_file), "phi_file not found: " + c.phi_file);
  }
}

/// Parses "key = value" lines; '#' starts a comment.
inline ExperimentConfig parse_config(std::istream& in) {
  using namespace detail;
  ExperimentConfig c;
  std::map<std::string, std::function<void(const std::string&)>> set{
      {"d", [&](const std::string& v) { c.d = to_int("d", v); }},
      {"n", [&](const std::string& v) { c.n = to_int("n", v); }},
      {"K", [&](const std::string& v) { c.steps = to_int("K", v); }},
      {"nu", [&](const std::string& v) { c.nu = to_double("nu", v); }},
      {"tol_marginal", [&](const std::string& v) { c.tol_marginal = to_double("tol_marginal", v); }},
      {"max_sweeps", [&](const std::string& v) { c.max_sweeps = to_int("max_sweeps", v); }},
      {"seed", [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int("seed", v)); }},
      {"gamma",
       [&](const std::string& v) {
         one_of("gamma", v, {"reference", "shear", "product", "file"});
         c.gamma = v;
       }},
      {"gamma_file", [&](const std::string& v) { c.gamma_file = v; }},
      {"shear_amplitude", [&](const std::string& v) { c.shear_amplitude = to_double("shear_amplitude", v); }},
      {"shear_width", [&](const std::string& v) { c.shear_width = to_double("shear_width", v); }},
      {"phi",
       [&](const std::string& v) {
         one_of("phi", v, {"sine_bump", "file"});
         c.phi = v;
       }},
      {"phi_file", [&](const std::string& v) { c.phi_file = v; }},
      {"phi_amplitude", [&](const std::string& v) { c.phi_amplitude = to_double("phi_amplitude", v); }},
      {"phi_mode", [&](const std::string& v) { c.phi_mode = to_int("phi_mode", v); }},
      {"phi_t_lo", [&](const std::string& v) { c.phi_t_lo = to_double("phi_t_lo", v); }},
      {"phi_t_hi", [&](const std::string& v) { c.phi_t_hi = to_double("phi_t_hi", v); }},
      {"pressure",
       [&](const std::string& v) {
         one_of("pressure", v, {"momentum", "dual"});
         c.pressure = v;
       }},
      {"eps", [&](const std::string& v) { c.eps = to_list("eps", v); }},
      {"convexity_eps", [&](const std::string& v) { c.convexity_eps = to_list("convexity_eps", v); }},
      {"slack", [&](const std::string& v) { c.slack = to_double("slack", v); }},
      {"parallel", [&](const std::string& v) { c.parallel = to_bool("parallel", v); }},
      {"output", [&](const std::string& v) { c.output = v; }},
      {"plot", [&](const std::string& v) { c.plot = to_bool("plot", v); }},
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = set.find(key);
    if (it == set.end()) throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    it->second(value);
    c.raw.emplace_back(key, value);
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path);
  return parse_config(f);
}

// ---------------------------------------------------------------------------
// Instances

inline torus::GridSpec grid_of(const ExperimentConfig& c) { return torus::make_grid(c.d, c.n); }

inline bregman::SolverConfig solver_of(const ExperimentConfig& c) {
  bregman::SolverConfig s;
  s.nu = c.nu;
  s.steps = c.steps;
  s.tol_marginal = c.tol_marginal;
  s.max_sweeps = c.max_sweeps;
  s.init_seed = c.seed;
  return s;
}

inline entropy::Coupling coupling_of(const ExperimentConfig& c) {
  const auto g = grid_of(c);
  if (c.gamma == "reference") return generators::reference_coupling(g, c.nu, c.steps);
  if (c.gamma == "product") return generators::product(g);
  if (c.gamma == "shear") return generators::shear(g, {c.shear_amplitude, c.shear_width});
  auto gamma = io::read_coupling_file(c.gamma_file);
  if (!(gamma.grid == g)) throw ConfigError("config: gamma_file " + c.gamma_file + " has a different grid");
  try {
    return entropy::validate_coupling(std::move(gamma));
  } catch (const Error& e) {
    throw ConfigError("config: gamma_file " + c.gamma_file + ": " + e.what());
  }
}

inline PerturbationField perturbation_of(const ExperimentConfig& c) {
  if (c.phi == "sine_bump")
    return sine_mode_bump(grid_of(c), c.steps, c.phi_amplitude, c.phi_mode, c.phi_t_lo, c.phi_t_hi);
  std::ifstream f(c.phi_file);
  if (!f) throw ConfigError("config: cannot read phi_file " + c.phi_file);
  auto phi = io::read_perturbation(f);
  if (!(phi.grid == grid_of(c)) || phi.steps != c.steps)
    throw ConfigError("config: phi_file " + c.phi_file + " does not match the grid and K");
  return phi;
}

// ---------------------------------------------------------------------------
// Plots

namespace detail {

inline std::string heat_color(double v, double scale) {
  const double t = scale > 0.0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  const int r = static_cast<int>(std::lround(255.0 * (t > 0 ? 1.0 : 1.0 + t)));
  const int b = static_cast<int>(std::lround(255.0 * (t < 0 ? 1.0 : 1.0 - t)));
  const int g = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(t))));
  std::ostringstream s;
  s << "rgb(" << r << "," << g << "," << b << ")";
  return s.str();
}

/// rows x cols cells, row 0 at the top.
inline void svg_heat_map(const std::string& path, const std::string& title, const std::vector<std::vector<double>>& rows) {
  const int nr = static_cast<int>(rows.size());
  const int nc = nr ? static_cast<int>(rows[0].size()) : 0;
  double scale = 0.0;
  for (const auto& r : rows)
    for (double v : r) scale = std::max(scale, std::abs(v));
  const int cell = std::max(4, 320 / std::max(1, std::max(nr, nc)));
  std::ofstream f(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << nc * cell + 20 << "\" height=\"" << nr * cell + 50 << "\">\n";
  f << "<text x=\"10\" y=\"20\" font-size=\"13\" font-family=\"sans-serif\">" << title << " (max |p| " << std::setprecision(3)
    << scale << ")</text>\n";
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nc; ++j)
      f << "<rect x=\"" << 10 + j * cell << "\" y=\"" << 35 + i * cell << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"" << heat_color(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], scale) << "\"/>\n";
  f << "</svg>\n";
}

inline void svg_line_plot(const std::string& path, const std::string& title, const std::vector<double>& x,
                          const std::vector<double>& y, double reference) {
  const double w = 420, h = 300, pad = 50;
  double x0 = *std::min_element(x.begin(), x.end()), x1 = *std::max_element(x.begin(), x.end());
  double y0 = std::min(reference, *std::min_element(y.begin(), y.end()));
  double y1 = std::max(reference, *std::max_element(y.begin(), y.end()));
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  auto px = [&](double v) { return pad + (v - x0) / (x1 - x0) * (w - 2 * pad); };
  auto py = [&](double v) { return h - pad - (v - y0) / (y1 - y0) * (h - 2 * pad); };
  std::ofstream f(path);
  f << std::setprecision(6);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  f << "<text x=\"10\" y=\"20\" font-size=\"13\" font-family=\"sans-serif\">" << title << "</text>\n";
  f << "<line x1=\"" << pad << "\" y1=\"" << py(reference) << "\" x2=\"" << w - pad << "\" y2=\"" << py(reference)
    << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
  f << "<polyline fill=\"none\" stroke=\"black\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) f << px(x[i]) << "," << py(y[i]) << " ";
  f << "\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i) f << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(y[i]) << "\" r=\"3\"/>\n";
  f << "<text x=\"" << pad << "\" y=\"" << h - 15 << "\" font-size=\"11\" font-family=\"sans-serif\">eps from " << x0
    << " to " << x1 << "; dashed: pairing " << reference << "</text>\n";
  f << "</svg>\n";
}

inline void plot_pressure(const std::filesystem::path& dir, const pressure::PressureField& p) {
  const auto& g = p.grid;
  if (g.d == 1) {
    std::vector<std::vector<double>> rows;
    for (int k = p.k_lo; k <= p.k_hi; ++k) rows.push_back(p[k].values);
    svg_heat_map((dir / "pressure.svg").string(), "pressure, slices k (rows) by cell (columns)", rows);
    return;
  }
  for (int k = p.k_lo; k <= p.k_hi; ++k) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(g.n));
    for (int z = 0; z < g.cells(); ++z) rows[static_cast<std::size_t>(g.coords(z)[0])].push_back(p[k][z]);
    std::ostringstream name;
    name << "pressure_k" << std::setw(3) << std::setfill('0') << k << ".svg";
    svg_heat_map((dir / name.str()).string(), "pressure at slice " + std::to_string(k), rows);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runs

struct RunResult {
  ExitCode code = ExitCode::success;
  std::string message;
  std::vector<std::string> artifacts;
};

class Run {
 public:
  explicit Run(ExperimentConfig cfg, std::string command)
      : cfg_(std::move(cfg)), command_(std::move(command)), dir_(cfg_.output), start_(std::chrono::steady_clock::now()) {
    std::filesystem::create_directories(dir_);
  }

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

  template <class Writer>
  void write(const std::string& name, Writer&& w) {
    const auto path = dir_ / name;
    std::ofstream f(path);
    if (!f) throw ConfigError("output: cannot write " + path.string());
    w(f);
    result.artifacts.push_back(name);
  }

  void note(const std::string& key, nlohmann::json v) { summary_[key] = std::move(v); }

  void finish() {
    nlohmann::json m;
    m["command"] = command_;
    m["version"] = kVersion;
    m["compiler"] = __VERSION__;
    m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    nlohmann::json echo = nlohmann::json::object();
    for (const auto& [k, v] : cfg_.raw) echo[k] = v;
    m["config"] = echo;
    m["exit_code"] = static_cast<int>(result.code);
    m["status"] = result.code == ExitCode::success ? "ok" : "failed";
    m["partial"] = result.code != ExitCode::success;
    m["message"] = result.message;
    m["artifacts"] = result.artifacts;
    m["summary"] = summary_;
    m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream f(dir_ / "manifest.json");
    f << m.dump(2) << "\n";
  }

  RunResult result;

 private:
  ExperimentConfig cfg_;
  std::string command_;
  std::filesystem::path dir_;
  std::chrono::steady_clock::time_point start_;
  nlohmann::json summary_ = nlohmann::json::object();
};

namespace detail {

inline std::optional<bregman::SolveResult> solve_step(Run& run, const entropy::Coupling& gamma) {
  const auto& c = run.config();
  auto s = bregman::solve_bro(gamma, bregman::uniform_targets(gamma.grid, c.steps), solver_of(c));
  run.write("potentials.txt", [&](std::ostream& o) { io::write_potentials(o, s.measure); });
  run.write("marginals.csv", [&](std::ostream& o) { io::write_marginals_csv(o, s.measure); });
  run.write("solver_report.csv", [&](std::ostream& o) { io::write_solver_csv(o, s.report); });
  run.note("optimal_value", s.report.optimal_value);
  run.note("sweeps", s.report.sweeps);
  run.note("max_violation", s.report.max_violation());
  if (!s.report.converged) {
    run.result.code = ExitCode::not_converged;
    run.result.message = "solver did not converge after " + std::to_string(s.report.sweeps) + " sweeps (violation " +
                         std::to_string(s.report.max_violation()) + ")";
    return std::nullopt;
  }
  return s;
}

inline pressure::PressureField pressure_step(Run& run, const path::FactoredPathMeasure& m) {
  const auto& c = run.config();
  auto p = c.pressure == "dual" ? pressure::dual_pressure(m) : pressure::pressure_of(m);
  run.write("pressure.csv", [&](std::ostream& o) { io::write_pressure_csv(o, p); });
  run.write("pressure_defect.csv", [&](std::ostream& o) { io::write_defect_csv(o, p); });
  run.note("pressure_sup", p.sup_norm());
  run.note("max_solenoidal_defect", p.max_defect());
  if (c.plot) {
    detail::plot_pressure(run.dir(), p);
    run.result.artifacts.push_back(c.d == 1 ? "pressure.svg" : "pressure_k*.svg");
  }
  return p;
}

inline void envelope_step(Run& run, const entropy::Coupling& gamma, const pressure::PressureField& p) {
  const auto& c = run.config();
  moser::EnvelopeConfig ec{solver_of(c)};
  ec.slack = c.slack;
  ec.convexity_eps = c.convexity_eps;
  ec.parallel = c.parallel;
  const auto phi = perturbation_of(c);
  const auto rep = moser::envelope_check(gamma, p, phi, c.eps, ec);
  run.write("envelope.csv", [&](std::ostream& o) { io::write_envelope_csv(o, rep); });
  if (!rep.convexity_eps.empty()) run.write("convexity.csv", [&](std::ostream& o) { io::write_convexity_csv(o, rep); });
  run.note("unit_pairing", rep.unit_pairing);
  run.note("n_norm_phi", rep.n_norm_phi);
  run.note("inequality_holds", rep.inequality_holds);
  run.note("mismatch_shrinks", rep.mismatch_shrinks);
  run.note("convex", rep.convex);
  if (c.plot) {
    std::vector<double> x, y;
    for (const auto& r : rep.rows) {
      x.push_back(r.eps);
      y.push_back(r.slope);
    }
    detail::svg_line_plot((run.dir() / "envelope_slope.svg").string(), "symmetric slope against eps", x, y, rep.unit_pairing);
    run.result.artifacts.push_back("envelope_slope.svg");
  }
  if (!rep.inequality_holds || !rep.convex) {
    run.result.code = ExitCode::validation_failed;
    run.result.message = std::string("envelope check failed:") + (rep.inequality_holds ? "" : " inequality") +
                         (rep.convex ? "" : " convexity");
  }
}

}  // namespace detail

/// command: solve | pressure | envelope | all. Errors of the library are mapped to exit codes.
inline RunResult run(const ExperimentConfig& cfg, const std::string& command) {
  detail::one_of("command", command, {"solve", "pressure", "envelope", "all"});
  Run r(cfg, command);
  try {
    const auto gamma = coupling_of(cfg);
    if (auto s = detail::solve_step(r, gamma)) {
      if (command != "solve") {
        const auto p = detail::pressure_step(r, s->measure);
        if (command == "envelope" || command == "all") detail::envelope_step(r, gamma, p);
      }
    }
  } catch (const ConfigError& e) {
    r.result = {ExitCode::config_error, e.what(), r.result.artifacts};
  } catch (const PreconditionError& e) {
    r.result = {ExitCode::config_error, e.what(), r.result.artifacts};
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    const bool solver = what.find("did not converge") != std::string::npos;
    r.result = {solver ? ExitCode::not_converged : ExitCode::validation_failed, what, r.result.artifacts};
  }
  r.finish();
  return r.result;
}

}  // namespace brodinger::experiment
