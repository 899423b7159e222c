#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "brodinger/bregman.hpp"
#include "brodinger/generators.hpp"
#include "brodinger/kinematics.hpp"
#include "brodinger/oracle.hpp"
#include "test_support.hpp"

using namespace brodinger;
using namespace brodinger::kinematics;
using test_support::random_bistochastic;
using test_support::random_measure;
using test_support::sup_diff;
using torus::make_grid;

namespace {

double sup_field_diff(const VectorField& a, const VectorField& b) {
  double m = 0.0;
  for (int j = 0; j < a.grid.d; ++j) m = std::max(m, sup_diff(a[j], b[j]));
  return m;
}

bregman::SolveResult solve(const entropy::Coupling& gam, double nu, int K) {
  bregman::SolverConfig cfg;
  cfg.nu = nu;
  cfg.steps = K;
  auto s = bregman::solve_bro(gam, bregman::uniform_targets(gam.grid, K), cfg);
  EXPECT_TRUE(s.report.converged);
  return s;
}

entropy::Coupling symmetric_coupling(const torus::GridSpec& g, unsigned seed) {
  auto c = random_bistochastic(g, seed, 0.7);
  Matrix s = 0.5 * (c.values + c.values.transpose());
  auto b = entropy::sinkhorn_balance(entropy::Coupling(g, s));
  b.values = 0.5 * (b.values + b.values.transpose());
  return b;
}

/// Girsanov functional evaluated by brute force over the path table.
double enumerated_girsanov(const oracle::FullJointLaw& t, double nu) {
  const int K = t.steps;
  const int m = t.cells();
  const auto& g = t.grid;
  const auto leb = entropy::uniform_density(g);
  double v = 0.5 * nu * (entropy::relative_entropy(oracle::marginal(t, 0), leb).value +
                         entropy::relative_entropy(oracle::marginal(t, K), leb).value);
  // pinned: the fixed time, moving: the increment (from, to).
  auto moment = [&](int pinned, int cond, int from, int to) {
    std::vector<double> mass(static_cast<std::size_t>(m * m), 0.0);
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(g.d), mass);
    for (std::size_t i = 0; i < t.paths(); ++i) {
      const auto cell = static_cast<std::size_t>(t.at(i, pinned) * m + t.at(i, cond));
      mass[cell] += t.prob[i];
      const auto ca = g.coords(t.at(i, from)), cb = g.coords(t.at(i, to));
      for (int j = 0; j < g.d; ++j)
        acc[static_cast<std::size_t>(j)][cell] +=
            t.prob[i] * torus::symmetric_lift(g, cb[static_cast<std::size_t>(j)] - ca[static_cast<std::size_t>(j)]);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < mass.size(); ++c) {
      if (mass[c] == 0.0) continue;
      for (int j = 0; j < g.d; ++j) {
        const double b = K * acc[static_cast<std::size_t>(j)][c] / mass[c];
        s += mass[c] * b * b;
      }
    }
    return s;
  };
  for (int k = 0; k < K; ++k) v += 0.25 / K * moment(0, k, k, k + 1);
  for (int k = 1; k <= K; ++k) v += 0.25 / K * moment(K, k, k - 1, k);
  return v;
}

}  // namespace

TEST(Drifts, ReferenceDriftsVanish) {
  const auto r = path::reference_measure(make_grid(1, 16), 0.2, 8);
  for (int k = 1; k < 8; ++k) {
    EXPECT_LT(torus::sup_norm(forward_drift(r, k).values), 1e-13);
    EXPECT_LT(torus::sup_norm(backward_drift(r, k).values), 1e-13);
    EXPECT_LT(torus::sup_norm(current_velocity(r, k)), 1e-13);
    EXPECT_LT(torus::sup_norm(osmotic_velocity(r, k)), 1e-13);
    EXPECT_LT(follmer_residual(r, k), 1e-13);
  }
}

TEST(Drifts, MatchEnumeration1D) {
  const auto p = random_measure(make_grid(1, 6), 4, 0.3, 11, 0.8);
  const auto t = oracle::from_measure(p);
  for (int k = 1; k < 4; ++k) {
    const auto f = oracle::conditional_increment(t, k, k + 1, k, 0);
    const auto b = oracle::conditional_increment(t, k - 1, k, k, 0);
    const auto fd = forward_drift(p, k).values;
    const auto bd = backward_drift(p, k).values;
    for (int z = 0; z < 6; ++z) {
      EXPECT_NEAR(fd[0][static_cast<std::size_t>(z)], 4.0 * f[static_cast<std::size_t>(z)], 1e-12);
      EXPECT_NEAR(bd[0][static_cast<std::size_t>(z)], 4.0 * b[static_cast<std::size_t>(z)], 1e-12);
    }
  }
}

TEST(Drifts, MatchEnumeration2D) {
  const auto p = random_measure(make_grid(2, 4), 3, 0.25, 5, 0.8);
  const auto t = oracle::from_measure(p);
  for (int k = 1; k < 3; ++k)
    for (int j = 0; j < 2; ++j) {
      const auto f = oracle::conditional_increment(t, k, k + 1, k, j);
      const auto fd = forward_drift(p, k).values;
      for (int z = 0; z < 16; ++z) EXPECT_NEAR(fd[j][static_cast<std::size_t>(z)], 3.0 * f[static_cast<std::size_t>(z)], 1e-12);
    }
}

TEST(Drifts, ReversalFlipsSign) {
  const auto p = random_measure(make_grid(1, 10), 6, 0.2, 3);
  const auto q = path::reversed(p);
  for (int k = 1; k < 6; ++k) {
    const auto f = forward_drift(p, k).values;
    const auto b = backward_drift(q, 6 - k).values;
    for (std::size_t i = 0; i < f[0].size(); ++i) EXPECT_NEAR(f[0][i], -b[0][i], 1e-12);
  }
}

TEST(Drifts, ParallelogramIdentity) {
  const auto p = random_measure(make_grid(2, 4), 4, 0.2, 21);
  for (int k = 1; k < 4; ++k) {
    const auto f = forward_drift(p, k).values, b = backward_drift(p, k).values;
    const auto c = current_velocity(p, k), w = osmotic_velocity(p, k);
    for (int z = 0; z < 16; ++z) {
      const auto i = static_cast<std::size_t>(z);
      double lhs = 0.0, rhs = 0.0;
      for (int j = 0; j < 2; ++j) {
        lhs += c[j][i] * c[j][i] + w[j][i] * w[j][i];
        rhs += 0.5 * (f[j][i] * f[j][i] + b[j][i] * b[j][i]);
      }
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, rhs));
    }
  }
}

TEST(Drifts, TimeSymmetricSolutionHasNoMidCurrent) {
  const auto g = make_grid(1, 16);
  const auto s = solve(symmetric_coupling(g, 8), 0.2, 8);
  EXPECT_LT(torus::sup_norm(current_velocity(s.measure, 4)), 1e-7);
}

TEST(Drifts, FollmerResidualTranslationInvariant) {
  const auto g = make_grid(1, 12);
  const auto p = random_measure(g, 4, 0.3, 2, 0.5);
  Matrix le(12, 12);
  std::vector<ScalarField> la(5, ScalarField(g));
  const int shift = 5;
  for (int x = 0; x < 12; ++x)
    for (int y = 0; y < 12; ++y) le((x + shift) % 12, (y + shift) % 12) = p.log_eta()(x, y);
  for (int k = 1; k < 4; ++k)
    for (int z = 0; z < 12; ++z) la[static_cast<std::size_t>(k)][(z + shift) % 12] = p.log_a(k)[z];
  const path::FactoredPathMeasure q(p.chain_ptr(), le, la);
  for (int k = 1; k < 4; ++k) EXPECT_NEAR(follmer_residual(p, k), follmer_residual(q, k), 1e-12);
}

TEST(Drifts, WrapFractionOfReference) {
  const auto g = make_grid(1, 32);
  // nu dt = 0.2 / 16: the tail beyond 1/4 is about 2.5 sigma of the step.
  const auto r = path::reference_measure(g, 0.2, 16);
  const auto check = check_wrap_mass(r);
  EXPECT_GT(check.fraction, 1e-3);
  EXPECT_TRUE(check.warn);
  const auto fine = check_wrap_mass(path::reference_measure(g, 0.02, 16));
  EXPECT_LT(fine.fraction, 1e-6);
  EXPECT_FALSE(fine.warn);
}

TEST(Girsanov, ReferenceIsZero) {
  const auto r = path::reference_measure(make_grid(1, 16), 0.2, 8);
  EXPECT_LT(std::abs(girsanov_value(r)), 1e-14);
  EXPECT_LT(std::abs(marginal_field_value(r)), 1e-14);
}

TEST(Girsanov, MatchesEnumeration) {
  for (unsigned seed : {1u, 2u}) {
    const auto p = random_measure(make_grid(1, 6), 4, 0.3, seed, 0.8);
    const auto t = oracle::from_measure(p);
    const double e = enumerated_girsanov(t, 0.3);
    EXPECT_NEAR(girsanov_value(p), e, 1e-12 * std::max(1.0, e));
  }
}

TEST(Girsanov, JensenAgainstMarginalField) {
  for (unsigned seed : {4u, 5u, 6u}) {
    const auto p = random_measure(make_grid(1, 8), 6, 0.2, seed, 0.6);
    EXPECT_LE(marginal_field_value(p), girsanov_value(p) + 1e-12);
  }
}

TEST(Girsanov, MarkovInstancesSatisfyEntropyBound) {
  // Product-form eta makes the factored law Markov: both functionals coincide.
  for (unsigned seed : {7u, 8u, 9u}) {
    const auto g = make_grid(1, 8);
    const auto base = random_measure(g, 6, 0.2, seed, 0.6);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.6);
    std::vector<double> f(8), h(8);
    for (int i = 0; i < 8; ++i) {
      f[static_cast<std::size_t>(i)] = n(rng);
      h[static_cast<std::size_t>(i)] = n(rng);
    }
    Matrix le(8, 8);
    for (int x = 0; x < 8; ++x)
      for (int y = 0; y < 8; ++y) le(x, y) = f[static_cast<std::size_t>(x)] + h[static_cast<std::size_t>(y)];
    const path::FactoredPathMeasure p(base.chain_ptr(), le, base.log_a());
    const double nh = 0.2 * path::path_entropy(p);
    EXPECT_NEAR(marginal_field_value(p), girsanov_value(p), 1e-12);
    EXPECT_LE(marginal_field_value(p), nh + 1e-10);
  }
}

TEST(Girsanov, GapShrinksUnderTimeRefinement) {
  const auto g = make_grid(1, 32);
  const auto gam = generators::shear(g, {0.15, 0.1});
  double gaps[2];
  int i = 0;
  for (int K : {8, 16}) {
    const auto s = solve(gam, 0.2, K);
    gaps[i++] = std::abs(girsanov_value(s.measure) - s.report.optimal_value);
  }
  EXPECT_GT(gaps[0] / gaps[1], 1.5);
}

TEST(Phases, ReferenceBridgeDensity) {
  const auto g = make_grid(1, 16);
  const double nu = 0.2;
  const int K = 8;
  const auto r = path::reference_measure(g, nu, K);
  const auto q = torus::heat_kernel(g, nu, 1.0 / K);
  const auto q1 = torus::compose_power(q, K);
  const int x = 3, y = 9;
  for (int k = 1; k < K; ++k) {
    const auto f = phase_fields(r, x, y, k);
    const auto a = torus::compose_power(q, k), b = torus::compose_power(q, K - k);
    for (int z = 0; z < 16; ++z) EXPECT_NEAR(f.rho[z], a.between(x, z) * b.between(z, y) / q1.between(x, y), 1e-11);
  }
}

TEST(Phases, MatchEnumeratedBridge) {
  const auto g = make_grid(1, 6);
  const int K = 4;
  const auto p = random_measure(g, K, 0.3, 17, 0.8);
  const auto t = oracle::from_measure(p);
  const int x = 1, y = 3;
  const auto bt = oracle::enumerate_conditional(t, {{{0, x}, {K, y}}});
  for (int k = 1; k < K; ++k) {
    const auto f = phase_fields(p, x, y, k);
    const auto rho = oracle::marginal(bt, k);
    const auto fw = oracle::conditional_increment(bt, k, k + 1, k, 0);
    const auto bw = oracle::conditional_increment(bt, k - 1, k, k, 0);
    for (int z = 0; z < 6; ++z) {
      const auto i = static_cast<std::size_t>(z);
      EXPECT_NEAR(f.rho[z], rho[z], 1e-12);
      EXPECT_NEAR(f.c[0][i], 0.5 * K * (fw[i] + bw[i]), 1e-11);
    }
  }
}

TEST(Phases, OsmoticFluxIsHalfNuGradient) {
  const auto g = make_grid(2, 4);
  const auto p = random_measure(g, 4, 0.25, 23);
  const auto f = phase_fields(p, 2, 13, 2);
  const auto gr = torus::gradient(f.rho);
  for (int j = 0; j < 2; ++j)
    for (int z = 0; z < 16; ++z) {
      const auto i = static_cast<std::size_t>(z);
      EXPECT_NEAR(f.rho[z] * f.w[j][i], 0.5 * 0.25 * gr[j][i], 1e-12);
    }
}

TEST(Phases, MixtureRecoversMarginal) {
  const auto g = make_grid(1, 6);
  const auto p = random_measure(g, 4, 0.3, 31);
  const auto gam = path::endpoint_coupling(p);
  const double hd = g.cell_measure();
  for (int k = 1; k < 4; ++k) {
    std::vector<double> mix(6, 0.0);
    for (int x = 0; x < 6; ++x)
      for (int y = 0; y < 6; ++y) {
        const auto f = phase_fields(p, x, y, k);
        for (int z = 0; z < 6; ++z) mix[static_cast<std::size_t>(z)] += gam.values(x, y) * hd * hd * f.rho[z];
      }
    EXPECT_LT(sup_diff(mix, path::marginal(p, k).values), 1e-12);
  }
}

TEST(Phases, NullPhaseRejected) {
  const auto g = make_grid(1, 6);
  const auto r = path::conditional_bridge(path::reference_measure(g, 0.2, 4), 1, 2);
  EXPECT_THROW(phase_fields(r, 0, 0, 2), PreconditionError);
}

TEST(Aggregates, TrivialCase) {
  const auto g = make_grid(1, 16);
  const auto gam = generators::reference_coupling(g, 0.2, 8);
  const auto s = solve(gam, 0.2, 8);
  const auto agg = phase_aggregates(s.measure, gam);
  for (int k = 1; k < 8; ++k) {
    EXPECT_LT(torus::sup_norm(agg.momentum[static_cast<std::size_t>(k)]), 1e-10);
    const auto& st = agg.stress[static_cast<std::size_t>(k)].entries[0];
    const auto [lo, hi] = std::minmax_element(st.begin(), st.end());
    EXPECT_LT(*hi - *lo, 1e-9);
  }
}

TEST(Aggregates, SinglePhaseEqualsPhaseFields) {
  const auto g = make_grid(1, 8);
  const int K = 6, x = 2, y = 5;
  const auto b = path::conditional_bridge(path::reference_measure(g, 0.2, K), x, y);
  const auto agg = phase_aggregates(b, path::endpoint_coupling(b));
  for (int k = 1; k < K; ++k) {
    const auto f = phase_fields(b, x, y, k);
    for (int z = 0; z < 8; ++z) {
      const auto i = static_cast<std::size_t>(z);
      EXPECT_NEAR(agg.momentum[static_cast<std::size_t>(k)][0][i], f.rho[z] * f.c[0][i], 1e-11);
      EXPECT_NEAR(agg.stress[static_cast<std::size_t>(k)](0, 0, z),
                  f.rho[z] * (f.c[0][i] * f.c[0][i] - f.w[0][i] * f.w[0][i]), 1e-10);
    }
  }
}

TEST(Aggregates, MatchExplicitPhaseSum2D) {
  const auto g = make_grid(2, 4);
  const int K = 3;
  const auto p = random_measure(g, K, 0.25, 41, 0.7);
  const auto gam = path::endpoint_coupling(p);
  const auto agg = phase_aggregates(p, gam);
  const double w0 = g.cell_measure() * g.cell_measure();
  for (int k = 1; k < K; ++k) {
    VectorField mom(g);
    StressField st(g);
    for (int x = 0; x < 16; ++x)
      for (int y = 0; y < 16; ++y) {
        const auto f = phase_fields(p, x, y, k);
        const double wt = gam.values(x, y) * w0;
        for (int z = 0; z < 16; ++z) {
          const auto i = static_cast<std::size_t>(z);
          for (int a = 0; a < 2; ++a) {
            mom[a][i] += wt * f.rho[z] * f.c[a][i];
            for (int c = a; c < 2; ++c)
              st.at(a, c, z) += wt * f.rho[z] * (f.c[a][i] * f.c[c][i] - f.w[a][i] * f.w[c][i]);
          }
        }
      }
    EXPECT_LT(sup_field_diff(mom, agg.momentum[static_cast<std::size_t>(k)]), 1e-11);
    for (std::size_t e = 0; e < 3; ++e)
      EXPECT_LT(sup_diff(st.entries[e], agg.stress[static_cast<std::size_t>(k)].entries[e]), 1e-10);
  }
}

TEST(Aggregates, TowerPropertyCollapse) {
  for (int d : {1, 2}) {
    const auto g = make_grid(d, d == 1 ? 10 : 4);
    const auto p = random_measure(g, 5, 0.2, 50u + static_cast<unsigned>(d), 0.7);
    const auto agg = phase_aggregates(p, path::endpoint_coupling(p));
    for (int k = 1; k < 5; ++k)
      EXPECT_LT(sup_field_diff(agg.momentum[static_cast<std::size_t>(k)], collapsed_momentum(p, k)), 1e-10);
  }
}

TEST(Aggregates, OsmoticFluxCancelsUnderIncompressibility) {
  const auto g = make_grid(1, 16);
  const auto gam = generators::shear(g, {0.15, 0.1});
  const auto s = solve(gam, 0.2, 8);
  const auto agg = phase_aggregates(s.measure, gam);
  for (int k = 1; k < 8; ++k)
    EXPECT_LE(torus::sup_norm(agg.osmotic_flux[static_cast<std::size_t>(k)]), 10.0 * 1e-9 * 0.2 * 16);
}

TEST(Aggregates, RejectsForeignCoupling) {
  const auto g = make_grid(1, 6);
  const auto p = random_measure(g, 4, 0.3, 2);
  EXPECT_THROW(phase_aggregates(p, entropy::product_coupling(g)), PreconditionError);
}

TEST(Continuity, AggregateDefectShrinksUnderRefinement) {
  double res[2];
  int i = 0;
  for (int n : {16, 32}) {
    const auto g = make_grid(1, n);
    const auto s = solve(generators::shear(g, {0.15, 0.1}), 0.2, n / 2);
    res[i++] = continuity_residual(s.measure, n / 4);
  }
  EXPECT_GT(res[0] / res[1], 1.5);
}

TEST(Continuity, PhaseDefectShrinksUnderRefinement) {
  double res[2];
  int i = 0;
  for (int n : {16, 32}) {
    const auto g = make_grid(1, n);
    const auto r = path::reference_measure(g, 0.2, n / 2);
    res[i++] = phase_continuity_residual(r, 0, n / 4, n / 4);
  }
  EXPECT_GT(res[0] / res[1], 1.5);
}
