#include <sstream>

#include <gtest/gtest.h>

#include "brodinger/generators.hpp"
#include "brodinger/io.hpp"
#include "test_support.hpp"

using namespace brodinger;

TEST(Io, FieldRoundTripIsExact) {
  const auto g = torus::make_grid(2, 4);
  torus::ScalarField f(g);
  for (int i = 0; i < g.cells(); ++i) f[i] = std::sin(1.0 + i) / 3.0;
  std::stringstream s;
  io::write_field(s, f);
  const auto back = io::read_field(s);
  EXPECT_TRUE(back.grid == g);
  EXPECT_EQ(back.values, f.values);
}

TEST(Io, CouplingRoundTripIsExact) {
  const auto c = test_support::random_bistochastic(torus::make_grid(1, 6), 3);
  std::stringstream s;
  io::write_coupling(s, c);
  const auto back = io::read_coupling(s);
  EXPECT_EQ(test_support::sup_diff(back.values, c.values), 0.0);
}

TEST(Io, PotentialsRoundTripIncludingInfinities) {
  const auto g = torus::make_grid(1, 6);
  auto p = test_support::random_measure(g, 4, 0.3, 5);
  Matrix le = p.log_eta();
  le(0, 3) = -std::numeric_limits<double>::infinity();
  const path::FactoredPathMeasure q(p.chain_ptr(), le, p.log_a());
  std::stringstream s;
  io::write_potentials(s, q);
  const auto back = io::read_potentials(s);
  EXPECT_EQ(back.steps(), 4);
  EXPECT_EQ(back.nu(), 0.3);
  EXPECT_TRUE(back.log_eta() == q.log_eta());
  for (int k = 0; k <= 4; ++k) EXPECT_EQ(back.log_a(k).values, q.log_a(k).values);
}

TEST(Io, PerturbationRoundTrip) {
  const auto phi = sine_bump(torus::make_grid(1, 8), 6, 0.2);
  std::stringstream s;
  io::write_perturbation(s, phi);
  const auto back = io::read_perturbation(s);
  EXPECT_EQ(back.k_min, phi.k_min);
  EXPECT_EQ(back.k_max, phi.k_max);
  for (int k = 0; k <= 6; ++k) EXPECT_EQ(back[k].values, phi[k].values);
}

TEST(Io, MalformedInputIsAConfigError) {
  std::stringstream wrong("brodinger field d=1 n=4\n1 2 3\n");
  EXPECT_THROW(io::read_field(wrong), ConfigError);
  std::stringstream kind("brodinger coupling d=1 n=4\n");
  EXPECT_THROW(io::read_field(kind), ConfigError);
  std::stringstream grid("brodinger field d=1 n=5\n1 2 3 4 5\n");
  EXPECT_THROW(io::read_field(grid), ConfigError);
  std::stringstream text("brodinger field d=1 n=4\n1 2 x 4\n");
  EXPECT_THROW(io::read_field(text), ConfigError);
  EXPECT_THROW(io::read_coupling_file("/nonexistent/gamma.txt"), ConfigError);
}

TEST(Io, CsvShapes) {
  const auto g = torus::make_grid(1, 8);
  bregman::SolverConfig cfg;
  cfg.steps = 4;
  auto s = bregman::solve_bro(generators::product(g), bregman::uniform_targets(g, 4), cfg);
  std::stringstream m;
  io::write_marginals_csv(m, s.measure);
  int lines = 0;
  for (std::string l; std::getline(m, l);) ++lines;
  EXPECT_EQ(lines, 1 + 5 * 8);
  std::stringstream r;
  io::write_solver_csv(r, s.report);
  EXPECT_NE(r.str().find("optimal_value,,"), std::string::npos);
}
