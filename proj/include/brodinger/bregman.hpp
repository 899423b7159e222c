#pragma once

// Entropy minimization over discrete-time path laws with a prescribed endpoint
// coupling and prescribed interior marginals, by cyclic KL projections on the
// potentials of the factored form (Gauss-Seidel: eta first, then a_1..a_{K-1}).

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/perturbation.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::bregman {

using entropy::Coupling;
using entropy::Density;
using path::FactoredPathMeasure;
using path::kNegInf;
using torus::GridSpec;
using torus::ScalarField;

/// Interior slices M_1..M_{K-1}; slices[k-1] holds M_k.
struct MarginalTargets {
  std::vector<Density> slices;

  const Density& at(int k) const { return slices[static_cast<std::size_t>(k - 1)]; }
};

inline MarginalTargets uniform_targets(const GridSpec& g, int steps) {
  return MarginalTargets{std::vector<Density>(static_cast<std::size_t>(steps - 1), entropy::uniform_density(g))};
}

/// Targets (1 + phi_k) Leb.
inline MarginalTargets perturbed_targets(const PerturbationField& phi) {
  validate_perturbation(phi);
  MarginalTargets t = uniform_targets(phi.grid, phi.steps);
  for (int k = 1; k < phi.steps; ++k) {
    auto& s = t.slices[static_cast<std::size_t>(k - 1)];
    for (int i = 0; i < s.size(); ++i) {
      s[i] += phi[k][i];
      if (!(s[i] > 0.0)) throw PreconditionError("perturbed target density is not positive at slice " + std::to_string(k));
    }
  }
  return t;
}

struct SolverConfig {
  double nu = 0.2;
  int steps = 16;
  double tol_marginal = 1e-9;
  int max_sweeps = 10000;
  int log_every = 0;                    // 0 disables progress callbacks
  std::uint64_t init_seed = 0;          // 0: all log-potentials zero; otherwise random in [-1, 1]
  std::function<void(int, double)> on_log;  // (sweep, violation)
};

struct SolverReport {
  int sweeps = 0;
  bool converged = false;
  double coupling_violation = 0.0;          // sup |gamma_P - gamma| in density units
  std::vector<double> marginal_violation;   // per interior slice, sup |rho_k - M_k|
  double optimal_value = 0.0;               // nu H(P | R)
  std::vector<double> dual_trace;           // dual objective at the start of each sweep
  bool dual_monotone = true;

  double max_violation() const {
    double v = coupling_violation;
    for (double m : marginal_violation) v = std::max(v, m);
    return v;
  }
};

namespace detail {

inline std::vector<ScalarField> initial_potentials(const GridSpec& g, int steps, std::uint64_t seed) {
  std::vector<ScalarField> la(static_cast<std::size_t>(steps + 1), ScalarField(g, 0.0));
  if (seed == 0) return la;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 1; k < steps; ++k)
    for (double& v : la[static_cast<std::size_t>(k)].values) v = u(rng);
  return la;
}

struct Violations {
  double coupling = 0.0;
  std::vector<double> marginal;
  double log_z = 0.0;
};

/// Measures the constraint violations of the current potentials.
inline Violations measure(const path::Chain& chain, const Matrix& log_eta, const std::vector<ScalarField>& log_a,
                          const Coupling& gamma, const MarginalTargets& targets) {
  const int K = chain.steps;
  const int m = chain.grid.cells();
  const double hd = chain.grid.cell_measure();
  const auto lf = path::forward_messages(chain, log_a);
  const auto lb = path::backward_messages(chain, log_a);
  Violations v;
  v.log_z = path::log_normalizer(chain, lf.back(), log_eta);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) {
      const double g = std::exp(lf.back()(x, y) + log_eta(x, y) - v.log_z) / hd;
      v.coupling = std::max(v.coupling, std::abs(g - gamma.values(x, y)));
    }
  v.marginal.assign(static_cast<std::size_t>(K - 1), 0.0);
  for (int k = 1; k < K; ++k) {
    const Matrix gk = path::detail::log_product(log_eta, lb[static_cast<std::size_t>(k)].transpose());
    const auto& target = targets.at(k);
    double worst = 0.0;
    for (int z = 0; z < m; ++z) {
      double s = 0.0;
      for (int x = 0; x < m; ++x) s += std::exp(lf[static_cast<std::size_t>(k)](x, z) + gk(x, z) - v.log_z);
      worst = std::max(worst, std::abs(s - target[z]));
    }
    v.marginal[static_cast<std::size_t>(k - 1)] = worst;
  }
  return v;
}

inline double dual_objective(const GridSpec& g, const Matrix& log_eta, const std::vector<ScalarField>& log_a,
                             const Coupling& gamma, const MarginalTargets& targets, double log_z) {
  const double hd = g.cell_measure();
  double d = 0.0;
  for (Eigen::Index i = 0; i < log_eta.size(); ++i) {
    const double w = gamma.values.data()[i];
    if (w > 0.0) d += w * hd * hd * log_eta.data()[i];
  }
  for (int k = 1; k < static_cast<int>(log_a.size()) - 1; ++k) {
    const auto& t = targets.at(k);
    for (int z = 0; z < t.size(); ++z) d += t[z] * hd * log_a[static_cast<std::size_t>(k)][z];
  }
  return d - log_z;
}

}  // namespace detail

struct SolveResult {
  FactoredPathMeasure measure;
  SolverReport report;
};

/// Entropy-minimal path law with endpoint coupling gamma and marginals M_k.
inline SolveResult solve_bro(const Coupling& gamma_in, const MarginalTargets& targets, const SolverConfig& cfg) {
  brodinger::detail::require(cfg.nu > 0.0, "solve_bro: nu must be positive");
  brodinger::detail::require(cfg.steps >= 2, "solve_bro: need K >= 2");
  brodinger::detail::require(cfg.tol_marginal > 0.0, "solve_bro: tolerance must be positive");
  brodinger::detail::require(cfg.max_sweeps >= 1, "solve_bro: max_sweeps must be positive");
  brodinger::detail::require(static_cast<int>(targets.slices.size()) == cfg.steps - 1,
                             "solve_bro: need K-1 interior target slices");
  const Coupling gamma = entropy::validate_coupling(gamma_in);
  const GridSpec g = gamma.grid;
  for (const auto& t : targets.slices) {
    brodinger::detail::require(t.grid == g, "solve_bro: target grid mismatch");
    entropy::validate_density(t, 1e-10);
  }

  const auto chain = path::make_chain(g, cfg.nu, cfg.steps);
  const int K = cfg.steps;
  const int m = g.cells();
  const double log_hd = std::log(g.cell_measure());

  Matrix log_gamma(m, m);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y)
      log_gamma(x, y) = gamma.values(x, y) > 0.0 ? std::log(gamma.values(x, y)) : kNegInf;
  Matrix log_eta(m, m);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) log_eta(x, y) = gamma.values(x, y) > 0.0 ? 0.0 : kNegInf;
  std::vector<ScalarField> log_a = detail::initial_potentials(g, K, cfg.init_seed);
  std::vector<ScalarField> log_target(static_cast<std::size_t>(K + 1), ScalarField(g));
  for (int k = 1; k < K; ++k)
    for (int z = 0; z < m; ++z) log_target[static_cast<std::size_t>(k)][z] = std::log(targets.at(k)[z]);

  SolverReport report;
  for (int sweep = 0;; ++sweep) {
    const auto v = detail::measure(*chain, log_eta, log_a, gamma, targets);
    const double dual = detail::dual_objective(g, log_eta, log_a, gamma, targets, v.log_z);
    if (!report.dual_trace.empty() &&
        dual < report.dual_trace.back() - 1e-12 * std::max(1.0, std::abs(report.dual_trace.back())))
      report.dual_monotone = false;
    report.dual_trace.push_back(dual);
    report.coupling_violation = v.coupling;
    report.marginal_violation = v.marginal;
    report.sweeps = sweep;
    const double worst = report.max_violation();
    if (cfg.log_every > 0 && cfg.on_log && sweep % cfg.log_every == 0) cfg.on_log(sweep, worst);
    if (!std::isfinite(worst)) throw NumericalError("solve_bro: constraint violation is not finite");
    if (worst <= cfg.tol_marginal) {
      report.converged = true;
      break;
    }
    if (sweep >= cfg.max_sweeps) break;

    // Endpoint projection: the new eta makes the endpoint law exactly gamma with Z = 1.
    const auto lb = path::backward_messages(*chain, log_a);
    {
      const auto lf = path::forward_messages(*chain, log_a);
      for (int x = 0; x < m; ++x)
        for (int y = 0; y < m; ++y)
          log_eta(x, y) = log_gamma(x, y) == kNegInf ? kNegInf : log_gamma(x, y) + log_hd - lf.back()(x, y);
    }
    // Interior projections in ascending time; LB_k only involves a_{k+1}.. (not yet updated).
    Matrix lf = path::detail::log_identity(m);
    for (int k = 1; k < K; ++k) {
      Matrix bare = path::detail::log_product(lf, chain->log_transition);
      const Matrix gk = path::detail::log_product(log_eta, lb[static_cast<std::size_t>(k)].transpose());
      auto& a = log_a[static_cast<std::size_t>(k)];
      for (int z = 0; z < m; ++z) {
        double mx = kNegInf;
        for (int x = 0; x < m; ++x) mx = std::max(mx, bare(x, z) + gk(x, z));
        double s = 0.0;
        for (int x = 0; x < m; ++x) s += std::exp(bare(x, z) + gk(x, z) - mx);
        a[z] = log_target[static_cast<std::size_t>(k)][z] - (mx + std::log(s));
      }
      lf = path::detail::add_to_columns(std::move(bare), a);
    }
  }

  FactoredPathMeasure p(chain, std::move(log_eta), std::move(log_a));
  report.optimal_value = cfg.nu * path::path_entropy(p);
  return SolveResult{std::move(p), std::move(report)};
}

/// nu H(P | R).
inline double optimal_value(const FactoredPathMeasure& p, double nu) { return nu * path::path_entropy(p); }

/// Optimal value with targets (1 + phi_k) Leb; throws if the solve does not converge.
inline double h_star(const Coupling& gamma, const PerturbationField& phi, const SolverConfig& cfg,
                     SolveResult* keep = nullptr) {
  brodinger::detail::require(phi.steps == cfg.steps, "h_star: perturbation has a different K");
  auto result = solve_bro(gamma, perturbed_targets(phi), cfg);
  if (!result.report.converged)
    throw NumericalError("h_star: solver did not converge (violation " + std::to_string(result.report.max_violation()) + ")");
  const double v = result.report.optimal_value;
  if (keep) *keep = std::move(result);
  return v;
}

}  // namespace brodinger::bregman
