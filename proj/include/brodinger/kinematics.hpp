#pragma once

// Drifts and velocities of factored path laws: unconditional (Markov
// projection) drifts, path-conditioned drifts for the Girsanov value,
// per-phase fields of the conditional bridges and their aggregates.
//
// Increments are lifted with torus::symmetric_lift. All drifts are
// K * E[lifted one-step increment | conditioning].

#include <cmath>
#include <string>
#include <vector>

#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::kinematics {

using entropy::Coupling;
using entropy::Density;
using path::FactoredPathMeasure;
using path::kNegInf;
using torus::GridSpec;
using torus::ScalarField;
using torus::VectorField;

enum class Direction { forward, backward };

struct DriftField {
  int k = 0;
  Direction direction = Direction::forward;
  VectorField values;
};

namespace detail {

using brodinger::detail::require;

/// W_j(a, b) = T(a, b) lift_j(b - a) for each axis j.
inline std::vector<Matrix> lifted_transitions(const path::Chain& chain) {
  const auto& g = chain.grid;
  const int m = g.cells();
  std::vector<Matrix> w(static_cast<std::size_t>(g.d), Matrix(m, m));
  for (int a = 0; a < m; ++a) {
    const auto ca = g.coords(a);
    for (int b = 0; b < m; ++b) {
      const auto cb = g.coords(b);
      for (int j = 0; j < g.d; ++j)
        w[static_cast<std::size_t>(j)](a, b) =
            chain.transition(a, b) * torus::symmetric_lift(g, cb[static_cast<std::size_t>(j)] - ca[static_cast<std::size_t>(j)]);
    }
  }
  return w;
}

/// exp(L - column max), column by column.
inline Matrix exp_shift_columns(const Matrix& l) {
  Matrix e(l.rows(), l.cols());
  for (Eigen::Index c = 0; c < l.cols(); ++c) {
    const double mx = l.col(c).maxCoeff();
    for (Eigen::Index r = 0; r < l.rows(); ++r) e(r, c) = mx == kNegInf ? 0.0 : std::exp(l(r, c) - mx);
  }
  return e;
}

/// exp(L - row max), row by row.
inline Matrix exp_shift_rows(const Matrix& l) {
  Matrix e(l.rows(), l.cols());
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    const double mx = l.row(r).maxCoeff();
    for (Eigen::Index c = 0; c < l.cols(); ++c) e(r, c) = mx == kNegInf ? 0.0 : std::exp(l(r, c) - mx);
  }
  return e;
}

/// out_j = scale * (num_j / den) entrywise; entries with zero denominator are 0.
inline std::vector<Matrix> ratio(const std::vector<Matrix>& num, const Matrix& den, double scale) {
  std::vector<Matrix> out;
  for (const auto& n : num) {
    Matrix r(n.rows(), n.cols());
    for (Eigen::Index i = 0; i < n.size(); ++i) {
      const double d = den.data()[i];
      r.data()[i] = d > 0.0 ? scale * n.data()[i] / d : 0.0;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Forward drift given (X_k = z, X_K = y): U_j(z, y), 0 <= k < K.
inline std::vector<Matrix> forward_given_end(const FactoredPathMeasure& p, int k,
                                             const std::vector<Matrix>& lifted) {
  const int K = p.steps();
  Matrix l = p.log_backward(k + 1);
  if (k + 1 < K) l = path::detail::add_to_rows(std::move(l), p.log_a(k + 1));
  const Matrix e = exp_shift_columns(l);
  const Matrix den = p.chain().transition * e;
  std::vector<Matrix> num;
  for (const auto& w : lifted) num.push_back(w * e);
  return ratio(num, den, K);
}

/// Backward drift given (X_0 = x, X_k = z): V_j(x, z), 0 < k <= K.
inline std::vector<Matrix> backward_given_start(const FactoredPathMeasure& p, int k,
                                                const std::vector<Matrix>& lifted) {
  const Matrix f = exp_shift_rows(p.log_forward(k - 1));
  const Matrix den = f * p.chain().transition;
  std::vector<Matrix> num;
  for (const auto& w : lifted) num.push_back(f * w);
  return ratio(num, den, p.steps());
}

/// Forward drift given (X_0 = x, X_k = z), returned as (x, z), 0 <= k < K.
inline std::vector<Matrix> forward_given_start(const FactoredPathMeasure& p, int k,
                                               const std::vector<Matrix>& lifted) {
  const int K = p.steps();
  // B(z', x) = a_{k+1}(z') + G_{k+1}(x, z').
  Matrix b = path::endpoint_contraction(p, k + 1).transpose();
  if (k + 1 < K) b = path::detail::add_to_rows(std::move(b), p.log_a(k + 1));
  const Matrix e = exp_shift_columns(b);
  const Matrix den = p.chain().transition * e;
  std::vector<Matrix> num;
  for (const auto& w : lifted) num.push_back(w * e);
  auto r = ratio(num, den, K);
  for (auto& m : r) m.transposeInPlace();
  return r;
}

/// Backward drift given (X_k = z, X_K = y), returned as (z, y), 0 < k <= K.
inline std::vector<Matrix> backward_given_end(const FactoredPathMeasure& p, int k,
                                              const std::vector<Matrix>& lifted) {
  // F(y, z'') = H_{k-1}(z'', y).
  const Matrix f = exp_shift_rows(path::start_contraction(p, k - 1).transpose());
  const Matrix den = f * p.chain().transition;
  std::vector<Matrix> num;
  for (const auto& w : lifted) num.push_back(f * w);
  auto r = ratio(num, den, p.steps());
  for (auto& m : r) m.transposeInPlace();
  return r;
}

/// Second moment sum_{a,b} mass(a, b) |drift(a, b)|^2.
inline double second_moment(const Matrix& log_mass, const std::vector<Matrix>& drift) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < log_mass.size(); ++i) {
    const double w = std::exp(log_mass.data()[i]);
    if (w == 0.0) continue;
    double v2 = 0.0;
    for (const auto& d : drift) v2 += d.data()[i] * d.data()[i];
    s += w * v2;
  }
  return s;
}

/// Unconditional drift from pair masses of (X_k, X_{k+1}) (forward) or (X_{k-1}, X_k) (backward).
inline VectorField markov_drift(const FactoredPathMeasure& p, int k, Direction dir) {
  const auto& g = p.grid();
  const int m = g.cells();
  const Matrix pm = path::detail::exp_entries(path::log_pair_masses(p, dir == Direction::forward ? k : k - 1));
  VectorField out(g);
  for (int z = 0; z < m; ++z) {
    double mass = 0.0;
    std::vector<double> acc(static_cast<std::size_t>(g.d), 0.0);
    for (int o = 0; o < m; ++o) {
      const double w = dir == Direction::forward ? pm(z, o) : pm(o, z);
      mass += w;
      const auto cz = g.coords(z), co = g.coords(o);
      for (int j = 0; j < g.d; ++j) {
        const auto a = static_cast<std::size_t>(j);
        const double lift = dir == Direction::forward ? torus::symmetric_lift(g, co[a] - cz[a])
                                                      : torus::symmetric_lift(g, cz[a] - co[a]);
        acc[a] += w * lift;
      }
    }
    if (!(mass > 0.0))
      throw NumericalError("drift: conditioning cell " + std::to_string(z) + " has zero mass at slice " + std::to_string(k));
    for (int j = 0; j < g.d; ++j) out[j][static_cast<std::size_t>(z)] = p.steps() * acc[static_cast<std::size_t>(j)] / mass;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Unconditional drifts and velocities

inline DriftField forward_drift(const FactoredPathMeasure& p, int k) {
  detail::require(k >= 1 && k <= p.steps() - 1, "forward_drift: need 1 <= k <= K-1");
  return DriftField{k, Direction::forward,
                    detail::markov_drift(p, k, Direction::forward)};
}

inline DriftField backward_drift(const FactoredPathMeasure& p, int k) {
  detail::require(k >= 1 && k <= p.steps() - 1, "backward_drift: need 1 <= k <= K-1");
  return DriftField{k, Direction::backward,
                    detail::markov_drift(p, k, Direction::backward)};
}

inline VectorField combine(const VectorField& a, const VectorField& b, double sa, double sb) {
  VectorField out(a.grid);
  for (int j = 0; j < a.grid.d; ++j)
    for (std::size_t i = 0; i < a[j].size(); ++i) out[j][i] = sa * a[j][i] + sb * b[j][i];
  return out;
}

inline VectorField current_velocity(const FactoredPathMeasure& p, int k) {
  return combine(forward_drift(p, k).values, backward_drift(p, k).values, 0.5, 0.5);
}

inline VectorField osmotic_velocity(const FactoredPathMeasure& p, int k) {
  return combine(forward_drift(p, k).values, backward_drift(p, k).values, 0.5, -0.5);
}

/// sup | w_k - (nu/2) grad_h log rho_k |.
inline double follmer_residual(const FactoredPathMeasure& p, int k) {
  const auto w = osmotic_velocity(p, k);
  const auto gl = entropy::log_gradient(path::marginal(p, k));
  double r = 0.0;
  for (int j = 0; j < p.grid().d; ++j)
    for (std::size_t i = 0; i < w[j].size(); ++i) r = std::max(r, std::abs(w[j][i] - 0.5 * p.nu() * gl[j][i]));
  return r;
}

/// Largest, over steps k, probability that the step X_k -> X_{k+1} moves farther than 1/4.
inline double wrap_mass_fraction(const FactoredPathMeasure& p) {
  const auto& g = p.grid();
  double worst = 0.0;
  for (int k = 0; k < p.steps(); ++k) {
    const Matrix pm = path::detail::exp_entries(path::log_pair_masses(p, k));
    double s = 0.0;
    for (int a = 0; a < g.cells(); ++a) {
      const auto ca = g.coords(a);
      for (int b = 0; b < g.cells(); ++b) {
        const auto cb = g.coords(b);
        double r2 = 0.0;
        for (int j = 0; j < g.d; ++j) {
          const double z = torus::wrap_displacement(g, cb[static_cast<std::size_t>(j)] - ca[static_cast<std::size_t>(j)]);
          r2 += z * z;
        }
        if (r2 > 1.0 / 16.0) s += pm(a, b);
      }
    }
    worst = std::max(worst, s);
  }
  return worst;
}

struct WrapCheck {
  double fraction = 0.0;
  bool warn = false;
};

inline WrapCheck check_wrap_mass(const FactoredPathMeasure& p, double threshold = 1e-6) {
  const double f = wrap_mass_fraction(p);
  return WrapCheck{f, f > threshold};
}

// ---------------------------------------------------------------------------
// Girsanov values

/// nu (H(rho_0) + H(rho_K)) / 2 + (1/4) sum dt (E|b_fwd|^2 + E|b_bwd|^2), with
/// the drifts conditioned on the path's past (X_0, X_k) and future (X_k, X_K).
inline double girsanov_value(const FactoredPathMeasure& p) {
  const int K = p.steps();
  const double dt = 1.0 / K;
  const auto lifted = detail::lifted_transitions(p.chain());
  const auto leb = entropy::uniform_density(p.grid());
  double v = 0.5 * p.nu() *
             (entropy::relative_entropy(path::marginal(p, 0), leb).value +
              entropy::relative_entropy(path::marginal(p, K), leb).value);
  for (int k = 0; k < K; ++k)
    v += 0.25 * dt * detail::second_moment(path::log_start_pair(p, k), detail::forward_given_start(p, k, lifted));
  for (int k = 1; k <= K; ++k)
    v += 0.25 * dt * detail::second_moment(path::log_end_pair(p, k), detail::backward_given_end(p, k, lifted));
  return v;
}

/// The same functional evaluated on the Markov-projected drifts (conditioned on X_k only).
inline double marginal_field_value(const FactoredPathMeasure& p) {
  const int K = p.steps();
  const double dt = 1.0 / K;
  const auto& g = p.grid();
  const auto leb = entropy::uniform_density(g);
  double v = 0.5 * p.nu() *
             (entropy::relative_entropy(path::marginal(p, 0), leb).value +
              entropy::relative_entropy(path::marginal(p, K), leb).value);
  auto moment = [&](const VectorField& b, const Density& rho) {
    double s = 0.0;
    for (int z = 0; z < g.cells(); ++z) {
      double v2 = 0.0;
      for (int j = 0; j < g.d; ++j) v2 += b[j][static_cast<std::size_t>(z)] * b[j][static_cast<std::size_t>(z)];
      s += v2 * rho[z] * g.cell_measure();
    }
    return s;
  };
  for (int k = 0; k < K; ++k)
    v += 0.25 * dt * moment(detail::markov_drift(p, k, Direction::forward), path::marginal(p, k));
  for (int k = 1; k <= K; ++k)
    v += 0.25 * dt * moment(detail::markov_drift(p, k, Direction::backward), path::marginal(p, k));
  return v;
}

// ---------------------------------------------------------------------------
// Phases

struct PhaseFields {
  Density rho;
  VectorField c;
  VectorField w;
};

namespace detail {

/// Osmotic velocity of a phase with log-density L (up to a constant):
/// (nu/2) (e^{L(z+h)-L(z)} - e^{L(z-h)-L(z)}) / (2h), so that rho w = (nu/2) grad_h rho exactly.
inline double phase_osmotic(const GridSpec& g, const std::vector<double>& logrho, int z, int axis, double nu) {
  const double lz = logrho[static_cast<std::size_t>(z)];
  const double up = logrho[static_cast<std::size_t>(g.shifted(z, axis, 1))];
  const double dn = logrho[static_cast<std::size_t>(g.shifted(z, axis, -1))];
  return 0.5 * nu * (std::exp(up - lz) - std::exp(dn - lz)) * 0.5 / g.h();
}

}  // namespace detail

/// Density, current and osmotic velocity at slice k of the bridge from x to y.
inline PhaseFields phase_fields(const FactoredPathMeasure& p, int x, int y, int k) {
  const int K = p.steps();
  const auto& g = p.grid();
  const int m = g.cells();
  detail::require(k >= 1 && k <= K - 1, "phase_fields: need an interior slice");
  detail::require(x >= 0 && x < m && y >= 0 && y < m, "phase_fields: cell out of range");
  const double lxy = p.log_forward(K)(x, y) + p.log_eta()(x, y);
  if (lxy == kNegInf) throw PreconditionError("phase_fields: null phase");
  const auto lifted = detail::lifted_transitions(p.chain());
  const auto u = detail::forward_given_end(p, k, lifted);
  const auto v = detail::backward_given_start(p, k, lifted);
  PhaseFields f{Density(g), VectorField(g), VectorField(g)};
  std::vector<double> logrho(static_cast<std::size_t>(m));
  for (int z = 0; z < m; ++z) {
    logrho[static_cast<std::size_t>(z)] = p.log_forward(k)(x, z) + p.log_backward(k)(z, y) - p.log_forward(K)(x, y);
    f.rho[z] = std::exp(logrho[static_cast<std::size_t>(z)]) / g.cell_measure();
  }
  for (int z = 0; z < m; ++z)
    for (int j = 0; j < g.d; ++j) {
      f.c[j][static_cast<std::size_t>(z)] = 0.5 * (u[static_cast<std::size_t>(j)](z, y) + v[static_cast<std::size_t>(j)](x, z));
      f.w[j][static_cast<std::size_t>(z)] = detail::phase_osmotic(g, logrho, z, j, p.nu());
    }
  return f;
}

/// Symmetric d x d tensor per cell; entries stored (0,0), (0,1), (1,1).
struct StressField {
  GridSpec grid;
  std::vector<std::vector<double>> entries;

  StressField() = default;
  explicit StressField(GridSpec g)
      : grid(g), entries(static_cast<std::size_t>(g.d * (g.d + 1) / 2), std::vector<double>(static_cast<std::size_t>(g.cells()), 0.0)) {}

  static int slot(int a, int b, int d) {
    if (a > b) std::swap(a, b);
    return d == 1 ? 0 : (a == 0 ? b : 2);
  }
  double operator()(int a, int b, int cell) const {
    return entries[static_cast<std::size_t>(slot(a, b, grid.d))][static_cast<std::size_t>(cell)];
  }
  double& at(int a, int b, int cell) {
    return entries[static_cast<std::size_t>(slot(a, b, grid.d))][static_cast<std::size_t>(cell)];
  }
};

/// Mean momentum and mean stress over phases, interior slices 1..K-1 (other slots empty).
struct PhaseAggregates {
  GridSpec grid;
  int steps = 0;
  std::vector<VectorField> momentum;
  std::vector<StressField> stress;
  std::vector<VectorField> osmotic_flux;  // sum over phases of rho w (vanishes under incompressibility)
};

/// Aggregates from the triple laws of (X_0, X_k, X_K), without materializing phases.
inline PhaseAggregates phase_aggregates(const FactoredPathMeasure& p, const Coupling& gamma) {
  const int K = p.steps();
  const auto& g = p.grid();
  const int m = g.cells();
  const int d = g.d;
  detail::require(gamma.grid == g, "phase_aggregates: grid mismatch");
  const auto own = path::endpoint_coupling(p);
  if ((own.values - gamma.values).cwiseAbs().maxCoeff() > 1e-6 * std::max(1.0, gamma.values.cwiseAbs().maxCoeff()))
    throw PreconditionError("phase_aggregates: coupling differs from the measure's endpoint law");
  const auto lifted = detail::lifted_transitions(p.chain());
  const double hd = g.cell_measure();
  const double logh = std::log(hd);

  PhaseAggregates agg{g, K, std::vector<VectorField>(static_cast<std::size_t>(K + 1), VectorField(g)),
                      std::vector<StressField>(static_cast<std::size_t>(K + 1), StressField(g)),
                      std::vector<VectorField>(static_cast<std::size_t>(K + 1), VectorField(g))};
  const Matrix& lfk = p.log_forward(K);
  for (int k = 1; k < K; ++k) {
    const auto u = detail::forward_given_end(p, k, lifted);
    const auto v = detail::backward_given_start(p, k, lifted);
    const Matrix& lf = p.log_forward(k);
    const Matrix& lb = p.log_backward(k);
    auto& mom = agg.momentum[static_cast<std::size_t>(k)];
    auto& st = agg.stress[static_cast<std::size_t>(k)];
    auto& of = agg.osmotic_flux[static_cast<std::size_t>(k)];
    std::vector<double> c(static_cast<std::size_t>(d)), w(static_cast<std::size_t>(d));
    for (int x = 0; x < m; ++x)
      for (int y = 0; y < m; ++y) {
        const double le = p.log_eta()(x, y);
        if (le == kNegInf) continue;
        // Phase weight gamma(x,y) h^{2d} times the phase density, in density units of z.
        const double lw = lfk(x, y) + le + logh - p.log_z() - logh;
        for (int z = 0; z < m; ++z) {
          const double lr = lf(x, z) + lb(z, y) - lfk(x, y);
          const double mass = std::exp(lw + lr);
          if (mass == 0.0) continue;
          for (int j = 0; j < d; ++j) {
            c[static_cast<std::size_t>(j)] = 0.5 * (u[static_cast<std::size_t>(j)](z, y) + v[static_cast<std::size_t>(j)](x, z));
            const int up = g.shifted(z, j, 1), dn = g.shifted(z, j, -1);
            const double eu = std::exp(lf(x, up) + lb(up, y) - lfk(x, y) - lr);
            const double ed = std::exp(lf(x, dn) + lb(dn, y) - lfk(x, y) - lr);
            w[static_cast<std::size_t>(j)] = 0.5 * p.nu() * (eu - ed) * 0.5 / g.h();
          }
          for (int a = 0; a < d; ++a) {
            mom[a][static_cast<std::size_t>(z)] += mass * c[static_cast<std::size_t>(a)];
            of[a][static_cast<std::size_t>(z)] += mass * w[static_cast<std::size_t>(a)];
            for (int b = a; b < d; ++b)
              st.at(a, b, z) += mass * (c[static_cast<std::size_t>(a)] * c[static_cast<std::size_t>(b)] -
                                        w[static_cast<std::size_t>(a)] * w[static_cast<std::size_t>(b)]);
          }
        }
      }
  }
  return agg;
}

/// E[(K/2)(lift(X_{k+1} - X_k) + lift(X_k - X_{k-1})); X_k = z] / h^d from pair marginals.
inline VectorField collapsed_momentum(const FactoredPathMeasure& p, int k) {
  const auto rho = path::marginal(p, k);
  const auto f = detail::markov_drift(p, k, Direction::forward);
  const auto b = detail::markov_drift(p, k, Direction::backward);
  VectorField out(p.grid());
  for (int j = 0; j < p.grid().d; ++j)
    for (int z = 0; z < p.grid().cells(); ++z)
      out[j][static_cast<std::size_t>(z)] = 0.5 * (f[j][static_cast<std::size_t>(z)] + b[j][static_cast<std::size_t>(z)]) * rho[z];
  return out;
}

/// rho_{k+1} - rho_{k-1} + 2 dt div(m_k) for a density sequence and momenta m_k = rho_k c_k.
inline ScalarField continuity_defect(const ScalarField& prev, const ScalarField& next, const VectorField& momentum,
                                     double dt) {
  const auto dv = torus::divergence(momentum);
  ScalarField out(prev.grid);
  for (int z = 0; z < out.size(); ++z) out[z] = next[z] - prev[z] + 2.0 * dt * dv[z];
  return out;
}

/// Aggregate continuity defect at interior slice k.
inline double continuity_residual(const FactoredPathMeasure& p, int k) {
  detail::require(k >= 1 && k <= p.steps() - 1, "continuity_residual: need an interior slice");
  const auto rho = path::marginal(p, k);
  const auto c = current_velocity(p, k);
  VectorField mom(p.grid());
  for (int j = 0; j < p.grid().d; ++j)
    for (int z = 0; z < rho.size(); ++z) mom[j][static_cast<std::size_t>(z)] = rho[z] * c[j][static_cast<std::size_t>(z)];
  return torus::sup_norm(continuity_defect(path::marginal(p, k - 1), path::marginal(p, k + 1), mom, 1.0 / p.steps()));
}

/// Same defect for the phase (x, y).
inline double phase_continuity_residual(const FactoredPathMeasure& p, int x, int y, int k) {
  detail::require(k >= 2 && k <= p.steps() - 2, "phase_continuity_residual: need 2 <= k <= K-2");
  const auto prev = phase_fields(p, x, y, k - 1), cur = phase_fields(p, x, y, k), next = phase_fields(p, x, y, k + 1);
  VectorField mom(p.grid());
  for (int j = 0; j < p.grid().d; ++j)
    for (int z = 0; z < cur.rho.size(); ++z) mom[j][static_cast<std::size_t>(z)] = cur.rho[z] * cur.c[j][static_cast<std::size_t>(z)];
  return torus::sup_norm(continuity_defect(prev.rho, next.rho, mom, 1.0 / p.steps()));
}

}  // namespace brodinger::kinematics
