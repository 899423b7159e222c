#pragma once

// Brute-force ground truth on tiny instances: explicit probability tables over
// all paths, two independent entropy minimizers (dual Newton ascent on the
// constraint potentials, primal entropic mirror descent) and exact conditioning.

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/path_measure.hpp"

namespace brodinger::oracle {

using entropy::Coupling;
using entropy::Density;
using path::FactoredPathMeasure;
using torus::GridSpec;

inline constexpr std::size_t kMaxPaths = 1000000;

/// Explicit law over all cells^(K+1) paths; path index has x_0 as the most significant digit.
struct FullJointLaw {
  GridSpec grid;
  int steps = 0;
  std::vector<double> prob;

  int cells() const { return grid.cells(); }
  std::size_t paths() const { return prob.size(); }

  /// Cell visited at time k by path `index`.
  int at(std::size_t index, int k) const {
    const auto m = static_cast<std::size_t>(cells());
    for (int j = steps; j > k; --j) index /= m;
    return static_cast<int>(index % m);
  }
  std::vector<int> decode(std::size_t index) const {
    std::vector<int> x(static_cast<std::size_t>(steps + 1));
    const auto m = static_cast<std::size_t>(cells());
    for (int k = steps; k >= 0; --k) {
      x[static_cast<std::size_t>(k)] = static_cast<int>(index % m);
      index /= m;
    }
    return x;
  }
};

inline std::size_t path_count(const GridSpec& g, int steps) {
  double count = std::pow(static_cast<double>(g.cells()), steps + 1);
  if (count > static_cast<double>(kMaxPaths)) throw PreconditionError("oracle: path table exceeds 1e6 entries");
  return static_cast<std::size_t>(count + 0.5);
}

/// Unnormalized reference weights Leb(x_0) prod T(x_k, x_{k+1}), as probabilities.
inline FullJointLaw reference_table(const GridSpec& g, double nu, int steps) {
  const auto q = torus::heat_kernel(g, nu, 1.0 / steps);
  FullJointLaw t{g, steps, std::vector<double>(path_count(g, steps))};
  const double hd = g.cell_measure();
  for (std::size_t i = 0; i < t.paths(); ++i) {
    const auto x = t.decode(i);
    double w = hd;
    for (int k = 0; k < steps; ++k)
      w *= q.between(x[static_cast<std::size_t>(k)], x[static_cast<std::size_t>(k + 1)]) * hd;
    t.prob[i] = w;
  }
  return t;
}

/// Expands a factored measure into its table by direct multiplication of the factors.
inline FullJointLaw from_measure(const FactoredPathMeasure& p) {
  FullJointLaw t = reference_table(p.grid(), p.nu(), p.steps());
  double total = 0.0;
  for (std::size_t i = 0; i < t.paths(); ++i) {
    const auto x = t.decode(i);
    double lw = p.log_eta()(x.front(), x.back());
    for (int k = 1; k < p.steps(); ++k) lw += p.log_a(k)[x[static_cast<std::size_t>(k)]];
    t.prob[i] *= std::exp(lw);
    total += t.prob[i];
  }
  for (double& v : t.prob) v /= total;
  return t;
}

// ---------------------------------------------------------------------------
// Summaries of a table

inline Density marginal(const FullJointLaw& t, int k) {
  Density rho(t.grid);
  for (std::size_t i = 0; i < t.paths(); ++i) rho[t.at(i, k)] += t.prob[i];
  for (double& v : rho.values) v /= t.grid.cell_measure();
  return rho;
}

/// Probability masses of (X_j, X_k).
inline Matrix pair_masses(const FullJointLaw& t, int j, int k) {
  Matrix out = Matrix::Zero(t.cells(), t.cells());
  for (std::size_t i = 0; i < t.paths(); ++i) out(t.at(i, j), t.at(i, k)) += t.prob[i];
  return out;
}

inline Coupling endpoint_coupling(const FullJointLaw& t) {
  const double hd = t.grid.cell_measure();
  return Coupling(t.grid, pair_masses(t, 0, t.steps) / (hd * hd));
}

/// sum P log(P / R) over paths.
inline double relative_entropy(const FullJointLaw& p, const FullJointLaw& r) {
  detail::require(p.paths() == r.paths(), "oracle::relative_entropy: table size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.paths(); ++i) {
    if (p.prob[i] == 0.0) continue;
    if (r.prob[i] == 0.0) return std::numeric_limits<double>::infinity();
    s += p.prob[i] * std::log(p.prob[i] / r.prob[i]);
  }
  return s;
}

inline double total_variation(const FullJointLaw& a, const FullJointLaw& b) {
  detail::require(a.paths() == b.paths(), "total_variation: table size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.paths(); ++i) s += std::abs(a.prob[i] - b.prob[i]);
  return 0.5 * s;
}

/// Conditioning events: X_time = cell for each listed pair.
struct ConditionSpec {
  std::vector<std::pair<int, int>> fixed;
};

inline FullJointLaw enumerate_conditional(const FullJointLaw& t, const ConditionSpec& spec) {
  FullJointLaw out{t.grid, t.steps, std::vector<double>(t.paths(), 0.0)};
  double mass = 0.0;
  for (std::size_t i = 0; i < t.paths(); ++i) {
    bool ok = true;
    for (const auto& [k, z] : spec.fixed) ok = ok && t.at(i, k) == z;
    if (ok) {
      out.prob[i] = t.prob[i];
      mass += t.prob[i];
    }
  }
  if (!(mass > 0.0)) throw PreconditionError("enumerate_conditional: zero-probability condition");
  for (double& v : out.prob) v /= mass;
  return out;
}

/// E[lift(X_to - X_from) | X_cond = z] along `axis`, per cell z.
inline std::vector<double> conditional_increment(const FullJointLaw& t, int from, int to, int cond, int axis) {
  std::vector<double> num(static_cast<std::size_t>(t.cells()), 0.0), den(num);
  for (std::size_t i = 0; i < t.paths(); ++i) {
    const int a = t.at(i, from), b = t.at(i, to);
    const int m = t.grid.coords(b)[static_cast<std::size_t>(axis)] - t.grid.coords(a)[static_cast<std::size_t>(axis)];
    const auto z = static_cast<std::size_t>(t.at(i, cond));
    num[z] += t.prob[i] * torus::symmetric_lift(t.grid, m);
    den[z] += t.prob[i];
  }
  for (std::size_t z = 0; z < num.size(); ++z) num[z] = den[z] > 0.0 ? num[z] / den[z] : 0.0;
  return num;
}

// ---------------------------------------------------------------------------
// Constraint features: indicator of (x_0, x_K) and of x_k for interior k

struct Constraints {
  std::vector<std::vector<int>> features;  // per path: active feature indices
  Eigen::VectorXd target;                  // required expectation of each feature
  int count = 0;
};

inline Constraints build_constraints(const FullJointLaw& shape, const Coupling& gamma,
                                     const std::vector<Density>& targets) {
  const int m = shape.cells();
  const int K = shape.steps;
  detail::require(static_cast<int>(targets.size()) == K - 1, "oracle: need K-1 interior targets");
  const double hd = shape.grid.cell_measure();
  Constraints c;
  c.count = m * m + (K - 1) * m;
  c.target.resize(c.count);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) c.target(x * m + y) = gamma.values(x, y) * hd * hd;
  for (int k = 1; k < K; ++k)
    for (int z = 0; z < m; ++z) c.target(m * m + (k - 1) * m + z) = targets[static_cast<std::size_t>(k - 1)][z] * hd;
  c.features.resize(shape.paths());
  for (std::size_t i = 0; i < shape.paths(); ++i) {
    const auto x = shape.decode(i);
    auto& f = c.features[i];
    f.push_back(x.front() * m + x.back());
    for (int k = 1; k < K; ++k) f.push_back(m * m + (k - 1) * m + x[static_cast<std::size_t>(k)]);
  }
  return c;
}

inline Eigen::VectorXd expectations(const Constraints& c, const std::vector<double>& prob) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(c.count);
  for (std::size_t i = 0; i < prob.size(); ++i)
    for (int f : c.features[i]) e(f) += prob[i];
  return e;
}

inline double feasibility_residual(const Constraints& c, const std::vector<double>& prob) {
  return (expectations(c, prob) - c.target).cwiseAbs().maxCoeff();
}

/// Route 1: damped Newton ascent on the dual. P(w) = R(w) exp(theta . f(w)) / Z(theta).
inline FullJointLaw dual_newton(const FullJointLaw& ref, const Constraints& c, double tol, int max_iter) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(c.count);
  std::vector<double> logr(ref.paths());
  for (std::size_t i = 0; i < ref.paths(); ++i)
    logr[i] = ref.prob[i] > 0.0 ? std::log(ref.prob[i]) : -std::numeric_limits<double>::infinity();

  // Dual objective log Z(theta) - theta . b and the implied law.
  auto evaluate = [&](const Eigen::VectorXd& th, std::vector<double>& prob) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ref.paths(); ++i) {
      double s = logr[i];
      for (int f : c.features[i]) s += th(f);
      prob[i] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (double& v : prob) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : prob) v /= z;
    return mx + std::log(z) - th.dot(c.target);
  };

  std::vector<double> prob(ref.paths()), trial(ref.paths());
  double obj = evaluate(theta, prob);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd e = expectations(c, prob);
    const Eigen::VectorXd grad = e - c.target;
    if (grad.cwiseAbs().maxCoeff() <= tol) break;
    Eigen::MatrixXd hess = -e * e.transpose();
    for (std::size_t i = 0; i < ref.paths(); ++i)
      for (int f : c.features[i])
        for (int g : c.features[i]) hess(f, g) += prob[i];
    const Eigen::VectorXd step = hess.completeOrthogonalDecomposition().solve(grad);
    // Near the optimum the Armijo decrease drops below roundoff; take full steps there.
    const bool local = grad.cwiseAbs().maxCoeff() < 1e-6;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Eigen::VectorXd cand = theta - t * step;
      const double o = evaluate(cand, trial);
      if (local || o <= obj - 1e-4 * t * grad.dot(step) || ls == 59) {
        theta = cand;
        obj = o;
        prob.swap(trial);
        break;
      }
    }
  }
  return FullJointLaw{ref.grid, ref.steps, std::move(prob)};
}

/// KL projection of a table onto the constraint set by cyclic iterative scaling.
inline std::vector<double> ipfp_project(std::vector<double> prob, const Constraints& c, double tol, int max_rounds) {
  // Constraint blocks: block 0 is the endpoint pair, block k the slice-k cells.
  const int blocks = c.features.empty() ? 0 : static_cast<int>(c.features.front().size());
  for (int round = 0; round < max_rounds; ++round) {
    for (int b = 0; b < blocks; ++b) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(c.count);
      for (std::size_t i = 0; i < prob.size(); ++i) e(c.features[i][static_cast<std::size_t>(b)]) += prob[i];
      for (std::size_t i = 0; i < prob.size(); ++i) {
        const int f = c.features[i][static_cast<std::size_t>(b)];
        if (prob[i] > 0.0) prob[i] *= c.target(f) / e(f);
      }
    }
    if (feasibility_residual(c, prob) <= tol) return prob;
  }
  throw NumericalError("oracle: iterative scaling did not converge");
}

/// Route 2: entropic mirror descent P <- Proj_C(P^(1-tau) R^tau) on the primal.
inline FullJointLaw mirror_descent(const FullJointLaw& ref, const Constraints& c, double tol, int max_iter) {
  constexpr double tau = 0.5;
  std::vector<double> prob = ipfp_project(ref.prob, c, tol, 1000000);
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> next(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i)
      next[i] = prob[i] > 0.0 ? std::pow(prob[i], 1.0 - tau) * std::pow(ref.prob[i], tau) : 0.0;
    next = ipfp_project(std::move(next), c, tol, 1000000);
    double change = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) change = std::max(change, std::abs(next[i] - prob[i]));
    prob.swap(next);
    if (change <= tol) break;
  }
  return FullJointLaw{ref.grid, ref.steps, std::move(prob)};
}

/// Range (max - min) of the least-squares residual of log(P/R) against the
/// constraint features plus a constant; zero iff P has the factored form.
inline double factorization_range(const FullJointLaw& p, const FullJointLaw& ref, const Constraints& c) {
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < p.paths(); ++i)
    if (p.prob[i] > 0.0) support.push_back(i);
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(support.size()), c.count + 1);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(support.size()));
  for (std::size_t r = 0; r < support.size(); ++r) {
    const auto i = support[r];
    design(static_cast<Eigen::Index>(r), c.count) = 1.0;
    for (int f : c.features[i]) design(static_cast<Eigen::Index>(r), f) = 1.0;
    rhs(static_cast<Eigen::Index>(r)) = std::log(p.prob[i] / ref.prob[i]);
  }
  const Eigen::VectorXd coef = design.completeOrthogonalDecomposition().solve(rhs);
  const Eigen::VectorXd res = rhs - design * coef;
  return res.size() == 0 ? 0.0 : res.maxCoeff() - res.minCoeff();
}

struct OracleResult {
  FullJointLaw law;         // dual-route optimizer
  FullJointLaw primal_law;  // mirror-descent optimizer
  double entropy = 0.0;     // H(law | R)
  double primal_entropy = 0.0;
  double route_tv = 0.0;    // total variation between the two routes
  double feasibility = 0.0;
  double factorization = 0.0;
};

/// Entropy minimizer over all path laws with the given endpoint coupling and interior marginals.
inline OracleResult brute_force_solve(const Coupling& gamma, const std::vector<Density>& targets, double nu,
                                      const GridSpec& grid, int steps) {
  const auto ref = reference_table(grid, nu, steps);
  const auto c = build_constraints(ref, gamma, targets);
  OracleResult r;
  r.law = dual_newton(ref, c, 1e-14, 200);
  r.primal_law = mirror_descent(ref, c, 1e-14, 2000);
  r.entropy = relative_entropy(r.law, ref);
  r.primal_entropy = relative_entropy(r.primal_law, ref);
  r.route_tv = total_variation(r.law, r.primal_law);
  r.feasibility = std::max(feasibility_residual(c, r.law.prob), feasibility_residual(c, r.primal_law.prob));
  r.factorization = factorization_range(r.law, ref, c);
  if (r.feasibility > 1e-10) throw NumericalError("brute_force_solve: KKT feasibility residual too large");
  return r;
}

}  // namespace brodinger::oracle
