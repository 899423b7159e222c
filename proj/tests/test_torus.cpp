#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "brodinger/torus.hpp"

using namespace brodinger;
using namespace brodinger::torus;

namespace {

constexpr double pi = std::numbers::pi;

ScalarField random_field(const GridSpec& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ScalarField f(g);
  for (double& v : f.values) v = n(rng);
  return f;
}

double sup_diff(const ScalarField& a, const ScalarField& b) {
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Grid, Construction) {
  const auto g = make_grid(1, 32);
  EXPECT_DOUBLE_EQ(g.h(), 1.0 / 32);
  EXPECT_EQ(g.cells(), 32);
  const auto g2 = make_grid(2, 16);
  EXPECT_EQ(g2.cells(), 256);
  EXPECT_DOUBLE_EQ(g2.cell_measure(), 1.0 / 256);
  EXPECT_DOUBLE_EQ(g2.cell_measure() * g2.cells(), 1.0);
}

TEST(Grid, RejectsBadSizes) {
  EXPECT_THROW(make_grid(1, 3), PreconditionError);
  EXPECT_THROW(make_grid(1, 2), PreconditionError);
  EXPECT_THROW(make_grid(1, 7), PreconditionError);
  EXPECT_THROW(make_grid(3, 8), PreconditionError);
}

TEST(Grid, IndexingRoundTrip) {
  const auto g = make_grid(2, 8);
  for (int i = 0; i < g.cells(); ++i) EXPECT_EQ(g.index(g.coords(i)), i);
  EXPECT_EQ(g.shifted(g.index({7, 0}), 0, 1), g.index({0, 0}));
  EXPECT_EQ(g.shifted(g.index({3, 0}), 1, -1), g.index({3, 7}));
}

TEST(Grid, DisplacementConvention) {
  const auto g = make_grid(1, 8);
  EXPECT_DOUBLE_EQ(wrap_displacement(g, 3), 3.0 / 8);
  EXPECT_DOUBLE_EQ(wrap_displacement(g, 4), -0.5);
  EXPECT_DOUBLE_EQ(wrap_displacement(g, 5), -3.0 / 8);
  EXPECT_DOUBLE_EQ(wrap_displacement(g, -1), -1.0 / 8);
  EXPECT_DOUBLE_EQ(symmetric_lift(g, 4), 0.0);
  EXPECT_DOUBLE_EQ(symmetric_lift(g, 5), -3.0 / 8);
  EXPECT_DOUBLE_EQ(symmetric_lift(g, 1), 1.0 / 8);
}

TEST(HeatKernel, EquilibratesForLargeTime) {
  for (double nu : {0.05, 0.2, 1.0}) {
    const auto k = heat_kernel(make_grid(1, 32), nu, 100.0);
    for (double v : k.values) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(HeatKernel, SeriesOracleAtOrigin) {
  const auto k = heat_kernel(make_grid(1, 32), 0.2, 0.125);
  EXPECT_NEAR(k[0], 2.5231325324212875236, 1e-13);
}

TEST(HeatKernel, PositiveSymmetricStochastic) {
  for (int d : {1, 2})
    for (double t : {1e-3, 0.01, 0.1, 0.3, 2.0}) {
      const auto g = make_grid(d, 16);
      const auto k = heat_kernel(g, 1.0, t);
      double mass = 0.0;
      for (int z = 0; z < g.cells(); ++z) {
        EXPECT_GT(k[z], 0.0);
        const auto c = g.coords(z);
        EXPECT_EQ(k[z], k[g.index({-c[0], -c[1]})]);
        mass += k[z];
      }
      EXPECT_NEAR(mass * g.cell_measure(), 1.0, 1e-14);
    }
}

TEST(HeatKernel, MonotoneConvergenceToUniform) {
  const auto g = make_grid(1, 32);
  double prev = std::numeric_limits<double>::infinity();
  for (double s = 1e-3; s < 20.0; s *= 2.0) {
    const auto k = heat_kernel(g, 0.2, s);
    double dev = 0.0;
    for (double v : k.values) dev = std::max(dev, std::abs(v - 1.0));
    EXPECT_LT(dev, prev);
    prev = dev;
  }
}

TEST(HeatKernel, RejectsBadParameters) {
  const auto g = make_grid(1, 8);
  EXPECT_THROW(heat_kernel(g, 0.0, 1.0), PreconditionError);
  EXPECT_THROW(heat_kernel(g, 1.0, -1.0), PreconditionError);
}

TEST(Semigroup, ComposeMatchesDoubledTime) {
  const auto g = make_grid(1, 32);
  const auto k1 = heat_kernel(g, 0.2, 0.25);
  const auto k2 = heat_kernel(g, 0.2, 0.5);
  const auto c = semigroup_compose(k1, k1);
  EXPECT_DOUBLE_EQ(c.s, 0.5);
  double gap = 0.0, mass = 0.0;
  for (int z = 0; z < g.cells(); ++z) {
    gap = std::max(gap, std::abs(c[z] - k2[z]));
    mass += c[z] * g.h();
  }
  // The exact discrete gap is below 1e-40; only roundoff remains.
  EXPECT_LT(gap, 1e-14);
  EXPECT_NEAR(mass, 1.0, 1e-14);
}

TEST(Semigroup, LongCompositionFlattens) {
  const auto g = make_grid(1, 16);
  const auto c = compose_power(heat_kernel(g, 1.0, 1.0), 20);
  for (double v : c.values) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Semigroup, RejectsMismatch) {
  const auto a = heat_kernel(make_grid(1, 16), 1.0, 1.0);
  const auto b = heat_kernel(make_grid(1, 16), 2.0, 1.0);
  const auto c = heat_kernel(make_grid(1, 32), 1.0, 1.0);
  EXPECT_THROW(semigroup_compose(a, b), PreconditionError);
  EXPECT_THROW(semigroup_compose(a, c), PreconditionError);
}

TEST(Differences, GradientOfConstantVanishes) {
  const auto g = make_grid(2, 8);
  const auto gr = gradient(ScalarField(g, 3.5));
  EXPECT_EQ(sup_norm(gr), 0.0);
}

TEST(Differences, SineEigenRelation) {
  const auto g = make_grid(1, 32);
  ScalarField f(g);
  for (int i = 0; i < g.cells(); ++i) f[i] = std::sin(2 * pi * i * g.h());
  const auto gr = gradient(f);
  const double factor = std::sin(2 * pi * g.h()) / g.h();
  for (int i = 0; i < g.cells(); ++i) EXPECT_NEAR(gr[0][i], factor * std::cos(2 * pi * i * g.h()), 1e-13);
}

TEST(Differences, AdjointnessOnRandomFields) {
  std::mt19937_64 rng(7);
  for (int d : {1, 2}) {
    const auto g = make_grid(d, 16);
    for (int trial = 0; trial < 5; ++trial) {
      const auto f = random_field(g, rng);
      VectorField v(g);
      for (int a = 0; a < d; ++a) v[a] = random_field(g, rng).values;
      const auto dv = divergence(v);
      const auto gf = gradient(f);
      double lhs = 0.0, rhs = 0.0;
      for (int i = 0; i < g.cells(); ++i) {
        lhs += f[i] * dv[i];
        for (int a = 0; a < d; ++a) rhs -= gf[a][i] * v[a][i];
      }
      EXPECT_NEAR(lhs, rhs, 1e-11 * (1.0 + std::abs(lhs)));
    }
  }
}

TEST(Poisson, ZeroRhs) {
  const auto u = poisson_solve(ScalarField(make_grid(2, 8)));
  EXPECT_EQ(sup_norm(u), 0.0);
}

TEST(Poisson, CosineMode) {
  const auto g = make_grid(1, 32);
  ScalarField r(g);
  for (int i = 0; i < g.cells(); ++i) r[i] = std::cos(2 * pi * i * g.h());
  const auto u = poisson_solve(r);
  const double f = g.h() / std::sin(2 * pi * g.h());
  for (int i = 0; i < g.cells(); ++i) EXPECT_NEAR(u[i], -r[i] * f * f, 1e-13);
}

TEST(Poisson, RoundTripAndMeanRecord) {
  std::mt19937_64 rng(11);
  for (int d : {1, 2})
    for (int n : {8, 32, 64}) {
      if (d == 2 && n == 64) continue;
      const auto g = make_grid(d, n);
      auto r = random_field(g, rng);
      PoissonDiagnostics diag;
      const auto u = poisson_solve(r, &diag);
      EXPECT_NEAR(diag.removed_mean, mean(r), 1e-15);
      EXPECT_LT(std::abs(mean(u)), 1e-13);
      // Project r on the range of the Laplacian: remove the mean and checkerboard modes.
      const auto lu = laplacian(u);
      auto hat = forward_dft(r);
      for (int i = 0; i < g.cells(); ++i)
        if (std::abs(laplacian_symbol(g, g.coords(i))) < 1e-10) hat[static_cast<std::size_t>(i)] = 0.0;
      const auto r_range = inverse_dft(g, hat);
      EXPECT_LT(sup_diff(lu, r_range), 1e-11) << "d=" << d << " n=" << n;
    }
}

TEST(Poisson, InverseOfLaplacianOnZeroMeanFields) {
  std::mt19937_64 rng(5);
  for (int d : {1, 2}) {
    const auto g = make_grid(d, d == 1 ? 64 : 16);
    auto f = random_field(g, rng);
    // Smooth fields have no checkerboard content; filter it out first.
    auto hat = forward_dft(f);
    for (int i = 0; i < g.cells(); ++i)
      if (std::abs(laplacian_symbol(g, g.coords(i))) < 1e-10) hat[static_cast<std::size_t>(i)] = 0.0;
    f = inverse_dft(g, hat);
    const auto back = poisson_solve(laplacian(f));
    EXPECT_LT(sup_diff(back, f), 1e-11);
  }
}

TEST(Poisson, ReportsCheckerboardContent) {
  const auto g = make_grid(1, 16);
  ScalarField r(g);
  for (int i = 0; i < g.cells(); ++i) r[i] = (i % 2 == 0) ? 1.0 : -1.0;
  PoissonDiagnostics diag;
  const auto u = poisson_solve(r, &diag);
  EXPECT_LT(sup_norm(u), 1e-14);
  EXPECT_NEAR(diag.removed_null_norm, 1.0, 1e-13);
}

TEST(Fields, NormsAndTranslation) {
  const auto g = make_grid(2, 8);
  ScalarField f(g);
  for (int i = 0; i < g.cells(); ++i) f[i] = i;
  const auto t = translate(f, {1, 2});
  EXPECT_DOUBLE_EQ(t[g.index({1, 2})], f[0]);
  EXPECT_DOUBLE_EQ(integral(t), integral(f));
  EXPECT_DOUBLE_EQ(l2_norm(ScalarField(g, 2.0)), 2.0);
}
