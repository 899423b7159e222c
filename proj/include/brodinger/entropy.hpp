#pragma once

// Densities and couplings on the grid, relative entropy, and the kinetic
// action / Fisher information / H_nu functionals (single phase and multiphase).

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "brodinger/errors.hpp"
#include "brodinger/torus.hpp"

namespace brodinger {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace entropy {

using torus::GridSpec;
using torus::ScalarField;
using torus::VectorField;

/// Probability density w.r.t. the normalized Lebesgue measure: sum values h^d = 1.
using Density = ScalarField;

inline Density uniform_density(const GridSpec& g) { return Density(g, 1.0); }

inline void validate_density(const Density& rho, double tol = 1e-12) {
  for (double v : rho.values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericalError("density has a negative or non-finite cell");
  const double mass = torus::integral(rho);
  if (std::abs(mass - 1.0) > tol)
    throw NumericalError("density mass is " + std::to_string(mass) + ", expected 1");
}

/// Density of a probability on grid x grid w.r.t. Leb (x) Leb: sum gamma h^{2d} = 1.
struct Coupling {
  GridSpec grid;
  Matrix values;

  Coupling() = default;
  Coupling(GridSpec g, Matrix v) : grid(g), values(std::move(v)) {
    detail::require(values.rows() == g.cells() && values.cols() == g.cells(), "Coupling: shape mismatch");
  }

  /// First (row) marginal as a density.
  Density first_marginal() const {
    Density out(grid);
    for (int i = 0; i < grid.cells(); ++i) out[i] = values.row(i).sum() * grid.cell_measure();
    return out;
  }
  Density second_marginal() const {
    Density out(grid);
    for (int j = 0; j < grid.cells(); ++j) out[j] = values.col(j).sum() * grid.cell_measure();
    return out;
  }
  /// Sup-distance of both marginals to the uniform density.
  double bistochastic_violation() const {
    double v = 0.0;
    for (double x : first_marginal().values) v = std::max(v, std::abs(x - 1.0));
    for (double x : second_marginal().values) v = std::max(v, std::abs(x - 1.0));
    return v;
  }
};

/// Leb (x) Leb.
inline Coupling product_coupling(const GridSpec& g) {
  return Coupling(g, Matrix::Ones(g.cells(), g.cells()));
}

/// Alternate row/column scaling until both marginals are uniform to `tol`.
inline Coupling sinkhorn_balance(Coupling c, double tol = 1e-14, int max_rounds = 100000) {
  const double hd = c.grid.cell_measure();
  const int m = c.grid.cells();
  for (int round = 0; round < max_rounds; ++round) {
    for (int i = 0; i < m; ++i) {
      const double s = c.values.row(i).sum() * hd;
      if (s <= 0.0) throw NumericalError("coupling has an empty row");
      c.values.row(i) /= s;
    }
    for (int j = 0; j < m; ++j) {
      const double s = c.values.col(j).sum() * hd;
      if (s <= 0.0) throw NumericalError("coupling has an empty column");
      c.values.col(j) /= s;
    }
    if (c.bistochastic_violation() <= tol) return c;
  }
  throw NumericalError("sinkhorn_balance: no convergence");
}

/// Accepts couplings that are bistochastic to 1e-10; rebalances those with a
/// violation in (1e-10, 1e-6]; rejects the rest.
inline Coupling validate_coupling(Coupling c) {
  for (int i = 0; i < c.values.rows(); ++i)
    for (int j = 0; j < c.values.cols(); ++j)
      if (!(c.values(i, j) >= 0.0) || !std::isfinite(c.values(i, j)))
        throw NumericalError("coupling has a negative or non-finite entry");
  const double mass = c.values.sum() * c.grid.cell_measure() * c.grid.cell_measure();
  if (std::abs(mass - 1.0) > 1e-6) throw NumericalError("coupling mass is " + std::to_string(mass));
  const double v = c.bistochastic_violation();
  if (v <= 1e-10) return c;
  if (v <= 1e-6) return sinkhorn_balance(std::move(c));
  throw NumericalError("coupling marginals deviate from uniform by " + std::to_string(v));
}

// ---------------------------------------------------------------------------
// Relative entropy

/// Relative entropy value; +infinity (absolute continuity failure) is an explicit state.
struct Entropy {
  double value = 0.0;
  bool infinite = false;

  static Entropy infinity() { return Entropy{std::numeric_limits<double>::infinity(), true}; }
  bool finite() const { return !infinite; }
};

/// sum p log(p / r) * measure, with 0 log(0 / .) = 0.
inline Entropy relative_entropy(std::span<const double> p, std::span<const double> r, double measure) {
  detail::require(p.size() == r.size(), "relative_entropy: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (r[i] == 0.0) return Entropy::infinity();
    s += p[i] * std::log(p[i] / r[i]);
  }
  return Entropy{s * measure, false};
}

inline Entropy relative_entropy(const Density& p, const Density& r) {
  detail::require(p.grid == r.grid, "relative_entropy: grid mismatch");
  return relative_entropy(p.values, r.values, p.grid.cell_measure());
}

inline Entropy relative_entropy(const Coupling& p, const Coupling& r) {
  detail::require(p.grid == r.grid, "relative_entropy: grid mismatch");
  const auto n = static_cast<std::size_t>(p.values.size());
  return relative_entropy(std::span<const double>(p.values.data(), n),
                          std::span<const double>(r.values.data(), n),
                          p.grid.cell_measure() * p.grid.cell_measure());
}

// ---------------------------------------------------------------------------
// Dynamic functionals

/// Densities rho_k and velocities c_k at times t_k = t0 + k dt.
struct TrajectoryFields {
  GridSpec grid;
  double dt = 0.0;
  std::vector<ScalarField> rho;
  std::vector<VectorField> c;

  int slices() const { return static_cast<int>(rho.size()); }
};

/// Trapezoidal weight of slice k among `slices` slices.
inline double trapezoid_weight(int k, int slices, double dt) {
  return (k == 0 || k == slices - 1) ? 0.5 * dt : dt;
}

inline double kinetic_action(const TrajectoryFields& t) {
  detail::require(t.rho.size() == t.c.size() && t.slices() >= 2, "kinetic_action: malformed trajectory");
  const double hd = t.grid.cell_measure();
  double total = 0.0;
  for (int k = 0; k < t.slices(); ++k) {
    const auto& rho = t.rho[static_cast<std::size_t>(k)];
    const auto& c = t.c[static_cast<std::size_t>(k)];
    double s = 0.0;
    for (int x = 0; x < rho.size(); ++x) {
      double v2 = 0.0;
      for (int a = 0; a < t.grid.d; ++a) v2 += c[a][static_cast<std::size_t>(x)] * c[a][static_cast<std::size_t>(x)];
      s += v2 * rho[x];
    }
    total += trapezoid_weight(k, t.slices(), t.dt) * s * hd;
  }
  return 0.5 * total;
}

/// Centered difference of log(rho) along each axis; requires rho > 0.
inline VectorField log_gradient(const ScalarField& rho) {
  ScalarField logr(rho.grid);
  for (int x = 0; x < rho.size(); ++x) {
    if (!(rho[x] > 0.0)) throw NumericalError("log_gradient: nonpositive density cell " + std::to_string(x));
    logr[x] = std::log(rho[x]);
  }
  return torus::gradient(logr);
}

/// (1/2) sum_k w_k sum_x |(1/2) grad log rho_k|^2 rho_k h^d.
inline double fisher_information(std::span<const ScalarField> rho, double dt) {
  detail::require(rho.size() >= 2, "fisher_information: need at least two slices");
  const int slices = static_cast<int>(rho.size());
  double total = 0.0;
  for (int k = 0; k < slices; ++k) {
    const auto& r = rho[static_cast<std::size_t>(k)];
    const auto gl = log_gradient(r);
    double s = 0.0;
    for (int x = 0; x < r.size(); ++x) {
      double v2 = 0.0;
      for (int a = 0; a < r.grid.d; ++a) {
        const double q = 0.5 * gl[a][static_cast<std::size_t>(x)];
        v2 += q * q;
      }
      s += v2 * r[x];
    }
    total += trapezoid_weight(k, slices, dt) * s * r.grid.cell_measure();
  }
  return 0.5 * total;
}

inline double fisher_information(const TrajectoryFields& t) { return fisher_information(t.rho, t.dt); }

/// Kinetic action plus nu^2 times the Fisher information.
inline double h_nu(const TrajectoryFields& t, double nu) {
  const double a = kinetic_action(t);
  if (nu == 0.0) return a;
  return a + nu * nu * fisher_information(t);
}

struct WeightedPhase {
  double weight = 0.0;
  TrajectoryFields fields;
};

inline double multiphase_h_nu(std::span<const WeightedPhase> phases, double nu) {
  double wsum = 0.0;
  for (const auto& p : phases) {
    detail::require(p.weight >= 0.0, "multiphase_h_nu: negative weight");
    wsum += p.weight;
  }
  detail::require(std::abs(wsum - 1.0) <= 1e-12, "multiphase_h_nu: weights must sum to 1");
  double total = 0.0;
  for (const auto& p : phases)
    if (p.weight > 0.0) total += p.weight * h_nu(p.fields, nu);
  return total;
}

}  // namespace entropy
}  // namespace brodinger
