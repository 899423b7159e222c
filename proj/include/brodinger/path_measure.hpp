#pragma once

// Discrete-time path measures on the torus in factored form
//
//   P(x_0, ..., x_K)  ∝  Leb(x_0) prod_k T(x_k, x_{k+1}) eta(x_0, x_K) prod_{k=1}^{K-1} a_k(x_k),
//
// with T(x, x') = q(x' - x) h^d the one-step heat-kernel transition. All
// potentials and messages live in log form. Forward messages LF_k(x_0, z)
// carry the potentials a_1..a_k, backward messages LB_k(z, y) carry
// a_{k+1}..a_{K-1}, so that
//
//   P(X_0 = x, X_k = z, X_K = y) = h^d exp(LF_k(x, z) + LB_k(z, y) + log eta(x, y) - log Z).

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::path {

using entropy::Coupling;
using entropy::Density;
using torus::GridSpec;
using torus::HeatKernel;
using torus::ScalarField;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

/// Exact log-sum-exp of A(i, .) + B(., j).
inline double lse_entry(const Matrix& a, const Matrix& b, Eigen::Index i, Eigen::Index j) {
  double m = kNegInf;
  for (Eigen::Index l = 0; l < a.cols(); ++l) m = std::max(m, a(i, l) + b(l, j));
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (Eigen::Index l = 0; l < a.cols(); ++l) s += std::exp(a(i, l) + b(l, j) - m);
  return m + std::log(s);
}

/// out(i, j) = log sum_l exp(A(i, l) + B(l, j)).
///
/// Rows of A and columns of B are shifted by their maxima and the contraction
/// runs as a dense product; entries whose shifted sum underflows are redone
/// with an exact per-entry log-sum-exp.
inline Matrix log_product(const Matrix& a, const Matrix& b) {
  const Eigen::Index rows = a.rows(), inner = a.cols(), cols = b.cols();
  Eigen::VectorXd ma(rows), mb(cols);
  for (Eigen::Index i = 0; i < rows; ++i) ma(i) = a.row(i).maxCoeff();
  for (Eigen::Index j = 0; j < cols; ++j) mb(j) = b.col(j).maxCoeff();
  Matrix ea(rows, inner), eb(inner, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index l = 0; l < inner; ++l)
      ea(i, l) = ma(i) == kNegInf ? 0.0 : std::exp(a(i, l) - ma(i));
  for (Eigen::Index l = 0; l < inner; ++l)
    for (Eigen::Index j = 0; j < cols; ++j)
      eb(l, j) = mb(j) == kNegInf ? 0.0 : std::exp(b(l, j) - mb(j));
  Matrix s = ea * eb;
  Matrix out(rows, cols);
  constexpr double underflow = 1e-280;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (ma(i) == kNegInf || mb(j) == kNegInf) {
        out(i, j) = kNegInf;
      } else if (s(i, j) > underflow) {
        out(i, j) = ma(i) + mb(j) + std::log(s(i, j));
      } else {
        out(i, j) = lse_entry(a, b, i, j);
      }
    }
  return out;
}

/// Entrywise exp; exact zeros for -inf entries (the vectorized exp clamps to a denormal).
inline Matrix exp_entries(const Matrix& a) {
  return a.unaryExpr([](double v) { return std::exp(v); });
}

inline double lse(const Matrix& a) {
  const double m = a.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log(exp_entries((a.array() - m).matrix()).sum());
}

inline Matrix log_identity(Eigen::Index m) {
  Matrix out = Matrix::Constant(m, m, kNegInf);
  for (Eigen::Index i = 0; i < m; ++i) out(i, i) = 0.0;
  return out;
}

/// Adds log_a(z) to every entry of column z.
inline Matrix add_to_columns(Matrix m, const ScalarField& log_a) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).array() += log_a[static_cast<int>(j)];
  return m;
}

/// Adds log_a(z) to every entry of row z.
inline Matrix add_to_rows(Matrix m, const ScalarField& log_a) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).array() += log_a[static_cast<int>(i)];
  return m;
}

}  // namespace detail

/// Reference one-step chain: grid, diffusivity, step count and transition matrices.
struct Chain {
  GridSpec grid;
  int steps = 0;
  double nu = 0.0;
  HeatKernel kernel;       // q = heat_kernel(grid, nu, 1/K)
  Matrix transition;       // T(x, x') = q(x' - x) h^d
  Matrix log_transition;

  double dt() const { return 1.0 / steps; }
};

inline std::shared_ptr<const Chain> make_chain(const GridSpec& g, double nu, int steps) {
  brodinger::detail::require(steps >= 2, "path measure: need K >= 2 time steps");
  auto c = std::make_shared<Chain>();
  c->grid = g;
  c->steps = steps;
  c->nu = nu;
  c->kernel = torus::heat_kernel(g, nu, 1.0 / steps);
  const int m = g.cells();
  c->transition.resize(m, m);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) c->transition(x, y) = c->kernel.between(x, y) * g.cell_measure();
  c->log_transition = c->transition.array().log().matrix();
  return c;
}

/// Log forward and backward messages of a factored measure (see file comment).
struct Messages {
  std::vector<Matrix> log_forward;   // k = 0..K
  std::vector<Matrix> log_backward;  // k = 0..K
  double log_z = 0.0;                // log of the total mass relative to the reference
};

/// Forward messages LF_0..LF_K for interior potentials log_a[1..K-1].
inline std::vector<Matrix> forward_messages(const Chain& chain, const std::vector<ScalarField>& log_a) {
  const int K = chain.steps;
  std::vector<Matrix> lf(static_cast<std::size_t>(K + 1));
  lf[0] = detail::log_identity(chain.grid.cells());
  for (int k = 1; k <= K; ++k) {
    Matrix next = detail::log_product(lf[static_cast<std::size_t>(k - 1)], chain.log_transition);
    if (k < K) next = detail::add_to_columns(std::move(next), log_a[static_cast<std::size_t>(k)]);
    lf[static_cast<std::size_t>(k)] = std::move(next);
  }
  return lf;
}

inline std::vector<Matrix> backward_messages(const Chain& chain, const std::vector<ScalarField>& log_a) {
  const int K = chain.steps;
  std::vector<Matrix> lb(static_cast<std::size_t>(K + 1));
  lb[static_cast<std::size_t>(K)] = detail::log_identity(chain.grid.cells());
  for (int k = K - 1; k >= 0; --k) {
    Matrix right = lb[static_cast<std::size_t>(k + 1)];
    if (k + 1 < K) right = detail::add_to_rows(std::move(right), log_a[static_cast<std::size_t>(k + 1)]);
    lb[static_cast<std::size_t>(k)] = detail::log_product(chain.log_transition, right);
  }
  return lb;
}

inline double log_normalizer(const Chain& chain, const Matrix& log_forward_final, const Matrix& log_eta) {
  return std::log(chain.grid.cell_measure()) + detail::lse(log_forward_final + log_eta);
}

/// Immutable factored path law; messages and normalization are computed at
/// construction and never updated in place.
class FactoredPathMeasure {
 public:
  FactoredPathMeasure(std::shared_ptr<const Chain> chain, Matrix log_eta, std::vector<ScalarField> log_a)
      : chain_(std::move(chain)), log_eta_(std::move(log_eta)), log_a_(std::move(log_a)) {
    const int K = chain_->steps;
    const int m = chain_->grid.cells();
    brodinger::detail::require(log_eta_.rows() == m && log_eta_.cols() == m,
                               "FactoredPathMeasure: endpoint potential shape mismatch");
    if (log_a_.empty()) log_a_.assign(static_cast<std::size_t>(K + 1), ScalarField(chain_->grid, 0.0));
    brodinger::detail::require(static_cast<int>(log_a_.size()) == K + 1,
                               "FactoredPathMeasure: expected K+1 interior potential slots");
    log_a_.front() = ScalarField(chain_->grid, 0.0);
    log_a_.back() = ScalarField(chain_->grid, 0.0);
    for (const auto& a : log_a_)
      for (double v : a.values)
        if (!std::isfinite(v)) throw NumericalError("FactoredPathMeasure: interior potential not finite");
    for (Eigen::Index i = 0; i < log_eta_.size(); ++i)
      if (std::isnan(log_eta_.data()[i]) || log_eta_.data()[i] == std::numeric_limits<double>::infinity())
        throw NumericalError("FactoredPathMeasure: endpoint potential is NaN or +inf");
    messages_.log_forward = forward_messages(*chain_, log_a_);
    messages_.log_backward = backward_messages(*chain_, log_a_);
    messages_.log_z = log_normalizer(*chain_, messages_.log_forward.back(), log_eta_);
    if (!std::isfinite(messages_.log_z)) throw NumericalError("FactoredPathMeasure: zero total mass");
  }

  const Chain& chain() const { return *chain_; }
  std::shared_ptr<const Chain> chain_ptr() const { return chain_; }
  const GridSpec& grid() const { return chain_->grid; }
  int steps() const { return chain_->steps; }
  double nu() const { return chain_->nu; }
  const Matrix& log_eta() const { return log_eta_; }
  /// Interior potential of slice k; slices 0 and K are identically zero.
  const ScalarField& log_a(int k) const { return log_a_[static_cast<std::size_t>(k)]; }
  const std::vector<ScalarField>& log_a() const { return log_a_; }
  const Messages& messages() const { return messages_; }
  const Matrix& log_forward(int k) const { return messages_.log_forward[static_cast<std::size_t>(k)]; }
  const Matrix& log_backward(int k) const { return messages_.log_backward[static_cast<std::size_t>(k)]; }
  double log_z() const { return messages_.log_z; }

 private:
  std::shared_ptr<const Chain> chain_;
  Matrix log_eta_;
  std::vector<ScalarField> log_a_;
  Messages messages_;
};

// ---------------------------------------------------------------------------
// Construction

/// Reversible reference chain R^nu started from Leb: eta = 1, a_k = 1.
inline FactoredPathMeasure reference_measure(const GridSpec& g, double nu, int steps) {
  auto chain = make_chain(g, nu, steps);
  return FactoredPathMeasure(chain, Matrix::Zero(g.cells(), g.cells()), {});
}

/// Time reversal: eta transposed, a_k -> a_{K-k}. Exact because the kernel is symmetric.
inline FactoredPathMeasure reversed(const FactoredPathMeasure& p) {
  const int K = p.steps();
  std::vector<ScalarField> la(static_cast<std::size_t>(K + 1));
  for (int k = 0; k <= K; ++k) la[static_cast<std::size_t>(k)] = p.log_a(K - k);
  return FactoredPathMeasure(p.chain_ptr(), p.log_eta().transpose(), std::move(la));
}

// ---------------------------------------------------------------------------
// Marginals

/// G_k(x, z) = log sum_y eta(x, y) exp(LB_k(z, y)).
inline Matrix endpoint_contraction(const FactoredPathMeasure& p, int k) {
  return detail::log_product(p.log_eta(), p.log_backward(k).transpose());
}

/// H_k(z, y) = log sum_x exp(LF_k(x, z)) eta(x, y).
inline Matrix start_contraction(const FactoredPathMeasure& p, int k) {
  return detail::log_product(p.log_forward(k).transpose(), p.log_eta());
}

/// Log probability masses of (X_0, X_k).
inline Matrix log_start_pair(const FactoredPathMeasure& p, int k) {
  Matrix out = p.log_forward(k) + endpoint_contraction(p, k);
  out.array() += std::log(p.grid().cell_measure()) - p.log_z();
  return out;
}

/// Log probability masses of (X_k, X_K).
inline Matrix log_end_pair(const FactoredPathMeasure& p, int k) {
  Matrix out = start_contraction(p, k) + p.log_backward(k);
  out.array() += std::log(p.grid().cell_measure()) - p.log_z();
  return out;
}

inline Density marginal(const FactoredPathMeasure& p, int k) {
  brodinger::detail::require(k >= 0 && k <= p.steps(), "marginal: time index out of range");
  const auto& g = p.grid();
  Density rho(g);
  const Matrix lp = log_start_pair(p, k);
  for (int z = 0; z < g.cells(); ++z) {
    double s = 0.0;
    for (int x = 0; x < g.cells(); ++x) s += std::exp(lp(x, z));
    rho[z] = s / g.cell_measure();
  }
  return rho;
}

/// Law of (X_0, X_K) as a density w.r.t. Leb (x) Leb.
inline Coupling endpoint_coupling(const FactoredPathMeasure& p) {
  const auto& g = p.grid();
  Matrix lg = p.log_forward(p.steps()) + p.log_eta();
  lg.array() += -p.log_z() - std::log(g.cell_measure());
  return Coupling(g, detail::exp_entries(lg));
}

/// Log probability masses of (X_k, X_{k+1}), 0 <= k < K.
inline Matrix log_pair_masses(const FactoredPathMeasure& p, int k) {
  brodinger::detail::require(k >= 0 && k < p.steps(), "pair_marginal: time index out of range");
  Matrix inner = detail::log_product(p.log_forward(k).transpose(), endpoint_contraction(p, k + 1));
  Matrix out = inner + p.chain().log_transition;
  if (k + 1 < p.steps()) out = detail::add_to_columns(std::move(out), p.log_a(k + 1));
  out.array() += std::log(p.grid().cell_measure()) - p.log_z();
  return out;
}

/// Law of (X_k, X_{k+1}) as a density w.r.t. Leb (x) Leb.
inline Coupling pair_marginal(const FactoredPathMeasure& p, int k) {
  const double hd = p.grid().cell_measure();
  Matrix dens = detail::exp_entries(log_pair_masses(p, k)) / (hd * hd);
  return Coupling(p.grid(), std::move(dens));
}

/// Probability masses of (X_0, X_k, X_K).
struct TripleLaw {
  int cells = 0;
  std::vector<double> mass;  // index (x * cells + z) * cells + y

  double operator()(int x, int z, int y) const {
    return mass[(static_cast<std::size_t>(x) * cells + z) * cells + y];
  }
};

inline TripleLaw triple_marginal(const FactoredPathMeasure& p, int k) {
  brodinger::detail::require(k >= 0 && k <= p.steps(), "triple_marginal: time index out of range");
  const int m = p.grid().cells();
  TripleLaw t{m, std::vector<double>(static_cast<std::size_t>(m) * m * m)};
  const double off = std::log(p.grid().cell_measure()) - p.log_z();
  const auto& lf = p.log_forward(k);
  const auto& lb = p.log_backward(k);
  for (int x = 0; x < m; ++x)
    for (int z = 0; z < m; ++z)
      for (int y = 0; y < m; ++y)
        t.mass[(static_cast<std::size_t>(x) * m + z) * m + y] =
            std::exp(lf(x, z) + lb(z, y) + p.log_eta()(x, y) + off);
  return t;
}

// ---------------------------------------------------------------------------
// Entropy

/// H(P | R^nu) = E_P[log eta(X_0, X_K) + sum_k log a_k(X_k)] - log Z.
inline double path_entropy(const FactoredPathMeasure& p) {
  const auto& g = p.grid();
  const double hd = g.cell_measure();
  double e = 0.0;
  const auto gamma = endpoint_coupling(p);
  for (int x = 0; x < g.cells(); ++x)
    for (int y = 0; y < g.cells(); ++y) {
      const double w = gamma.values(x, y) * hd * hd;
      if (w > 0.0) e += w * p.log_eta()(x, y);
    }
  for (int k = 1; k < p.steps(); ++k) {
    const auto rho = marginal(p, k);
    double s = 0.0;
    for (int z = 0; z < g.cells(); ++z) s += rho[z] * p.log_a(k)[z];
    e += s * hd;
  }
  return e - p.log_z();
}

// ---------------------------------------------------------------------------
// Bridges

/// Law of the path conditioned on X_0 = x and X_K = y.
inline FactoredPathMeasure conditional_bridge(const FactoredPathMeasure& p, int x, int y) {
  const int m = p.grid().cells();
  brodinger::detail::require(x >= 0 && x < m && y >= 0 && y < m, "conditional_bridge: cell out of range");
  const double lg = p.log_forward(p.steps())(x, y) + p.log_eta()(x, y);
  if (lg == kNegInf) throw PreconditionError("conditional_bridge: endpoint pair has zero probability");
  Matrix pin = Matrix::Constant(m, m, kNegInf);
  pin(x, y) = 0.0;
  return FactoredPathMeasure(p.chain_ptr(), std::move(pin), p.log_a());
}

/// Positive factors with dR^{x,y}_eps / dR_eps = f(X_eps) g(X_{1-eps}) on the
/// index window [eps_index, K - eps_index].
struct BridgeFactors {
  ScalarField f;
  ScalarField g;
  int x = 0;
  int y = 0;
  int eps_index = 0;
};

inline BridgeFactors bridge_factors(const GridSpec& grid, double nu, int steps, int eps_index, int x, int y) {
  brodinger::detail::require(eps_index > 0 && 2 * eps_index < steps, "bridge_factors: need 0 < eps < K/2");
  const auto q = torus::heat_kernel(grid, nu, 1.0 / steps);
  const auto tau_eps = torus::compose_power(q, eps_index);
  const auto tau_one = torus::compose_power(q, steps);
  const double norm = std::sqrt(tau_one.between(x, y));
  BridgeFactors bf{ScalarField(grid), ScalarField(grid), x, y, eps_index};
  for (int b = 0; b < grid.cells(); ++b) {
    bf.f[b] = tau_eps.between(x, b) / norm;
    bf.g[b] = tau_eps.between(b, y) / norm;
  }
  return bf;
}

}  // namespace brodinger::path
