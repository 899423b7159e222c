// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brodinger/bregman.hpp"
#include "brodinger/generators.hpp"
#include "brodinger/kinematics.hpp"
#include "brodinger/moser.hpp"
#include "brodinger/oracle.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/pressure.hpp"
#include "test_support.hpp"

using namespace brodinger;

namespace {

constexpr double kNu = 0.2;
constexpr double kTol = 1e-11;

bregman::SolverConfig config(int steps) {
  bregman::SolverConfig c;
  c.nu = kNu;
  c.steps = steps;
  c.tol_marginal = kTol;
  return c;
}

std::vector<bregman::SolverReport> g_reports;

void record(const bregman::SolverReport& r) { g_reports.push_back(r); }

/// Shear solves shared between criteria, keyed by (N, K).
const bregman::SolveResult& shear_solve(int n, int steps) {
  static std::map<std::pair<int, int>, bregman::SolveResult> cache;
  const auto key = std::make_pair(n, steps);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto g = torus::make_grid(1, n);
    auto s = bregman::solve_bro(generators::shear(g), bregman::uniform_targets(g, steps), config(steps));
    record(s.report);
    it = cache.emplace(key, std::move(s)).first;
  }
  return it->second;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome criterion1() {
  const auto g = torus::make_grid(1, 32);
  const int K = 16;
  const auto gam = generators::reference_coupling(g, kNu, K);
  const auto s = bregman::solve_bro(gam, bregman::uniform_targets(g, K), config(K));
  record(s.report);
  double drift = 0.0;
  for (int k = 1; k < K; ++k) {
    drift = std::max(drift, torus::sup_norm(kinematics::forward_drift(s.measure, k).values));
    drift = std::max(drift, torus::sup_norm(kinematics::backward_drift(s.measure, k).values));
  }
  const double value = std::abs(s.report.optimal_value);
  const double p = pressure::pressure_of(s.measure).sup_norm();
  return {s.report.converged && value <= 1e-10 && drift <= 1e-8 && p <= 1e-6,
          "value " + fmt("%.2e", value) + ", drift sup " + fmt("%.2e", drift) + ", pressure sup " + fmt("%.2e", p)};
}

Outcome criterion2() {
  const auto g = torus::make_grid(1, 4);
  const int K = 2;
  const auto cfg = config(K);
  double tv = 0.0, gap = 0.0;
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const auto gam = test_support::random_bistochastic(g, 1000 + seed);
    const auto targets = bregman::uniform_targets(g, K);
    const auto res = oracle::brute_force_solve(gam, targets.slices, kNu, g, K);
    const auto sol = bregman::solve_bro(gam, targets, cfg);
    record(sol.report);
    tv = std::max(tv, oracle::total_variation(oracle::from_measure(sol.measure), res.law));
    gap = std::max(gap, std::abs(sol.report.optimal_value / kNu - res.entropy));
  }
  return {tv <= 1e-5 && gap <= 1e-6, "max TV " + fmt("%.2e", tv) + ", max objective gap " + fmt("%.2e", gap)};
}

moser::EnvelopeReport envelope_report() {
  static std::optional<moser::EnvelopeReport> rep;
  if (!rep) {
    const auto& s = shear_solve(32, 16);
    const auto g = s.measure.grid();
    const auto p = pressure::pressure_of(s.measure);
    moser::EnvelopeConfig cfg{config(16)};
    rep = moser::envelope_check(generators::shear(g), p, sine_bump(g, 16, 0.4), {4e-3, 1e-2, 2e-2}, cfg);
  }
  return *rep;
}

Outcome criterion3() {
  const auto rep = envelope_report();
  const auto* mid = rep.row(1e-2);
  double worst = 1e300;
  for (const auto& r : rep.rows) worst = std::min(worst, r.margin);
  const bool ok = rep.inequality_holds && mid && mid->mismatch <= 0.1 && rep.mismatch_shrinks;
  return {ok, "min margin " + fmt("%.2e", worst) + ", mismatch at 1e-2 " + fmt("%.4f", mid ? mid->mismatch : -1.0) +
                  ", mismatch shrinks " + (rep.mismatch_shrinks ? "yes" : "no")};
}

Outcome criterion4() {
  const double coarse = pressure::pressure_of(shear_solve(32, 16).measure).max_defect();
  const double fine = pressure::pressure_of(shear_solve(64, 32).measure).max_defect();
  return {coarse <= 0.05 && coarse / fine >= 1.5,
          "defect (32,16) " + fmt("%.2e", coarse) + ", (64,32) " + fmt("%.2e", fine) + ", ratio " + fmt("%.2f", coarse / fine)};
}

Outcome criterion5() {
  auto gap = [](const bregman::SolveResult& s) {
    return std::abs(kinematics::girsanov_value(s.measure) - s.report.optimal_value);
  };
  const auto& a = shear_solve(32, 16);
  const auto& b = shear_solve(32, 32);
  const double rel = gap(a) / std::max(a.report.optimal_value, 1e-8);
  const double ratio = gap(a) / gap(b);
  return {rel <= 0.1 && ratio >= 1.5, "relative gap K=16 " + fmt("%.3f", rel) + ", gap ratio K=16/K=32 " + fmt("%.2f", ratio)};
}

Outcome criterion6() {
  const double coarse = kinematics::follmer_residual(shear_solve(32, 16).measure, 8);
  const double fine = kinematics::follmer_residual(shear_solve(64, 32).measure, 16);
  return {coarse / fine >= 3.0,
          "residual (32,16) " + fmt("%.3e", coarse) + ", (64,32) " + fmt("%.3e", fine) + ", ratio " + fmt("%.2f", coarse / fine)};
}

Outcome criterion7() {
  const auto rep = envelope_report();
  return {rep.second_differences.size() == 3 && rep.min_second_difference() >= -1e-8,
          "min second difference " + fmt("%.3e", rep.min_second_difference())};
}

Outcome criterion8() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& name) {
    if (!ok) failed.push_back(name);
  };
  // Data processing and additivity on random tiny measures.
  {
    const auto g = torus::make_grid(1, 4);
    const int K = 3;
    const auto r = path::reference_measure(g, kNu, K);
    const auto tr = oracle::from_measure(r);
    bool dpi = true, add = true;
    for (unsigned seed = 0; seed < 5; ++seed) {
      const auto p = test_support::random_measure(g, K, kNu, 500 + seed, 0.7);
      const double hp = path::path_entropy(p);
      dpi = dpi && entropy::relative_entropy(path::endpoint_coupling(p), path::endpoint_coupling(r)).value <= hp + 1e-12;
      for (int k = 0; k <= K; ++k)
        dpi = dpi && entropy::relative_entropy(path::marginal(p, k), entropy::uniform_density(g)).value <= hp + 1e-12;
      const auto tp = oracle::from_measure(p);
      const auto gam = path::endpoint_coupling(p);
      double total = entropy::relative_entropy(gam, path::endpoint_coupling(r)).value;
      for (int x = 0; x < g.cells(); ++x)
        for (int y = 0; y < g.cells(); ++y) {
          const oracle::ConditionSpec c{{{0, x}, {K, y}}};
          total += gam.values(x, y) * g.cell_measure() * g.cell_measure() *
                   oracle::relative_entropy(oracle::enumerate_conditional(tp, c), oracle::enumerate_conditional(tr, c));
        }
      add = add && std::abs(total - hp) <= 1e-10;
    }
    check(dpi, "data processing");
    check(add, "additivity");
  }
  // Tower collapse and parallelogram identity.
  {
    double tower = 0.0, para = 0.0;
    for (int d : {1, 2}) {
      const auto g = torus::make_grid(d, d == 1 ? 10 : 4);
      const int K = 5;
      const auto p = test_support::random_measure(g, K, kNu, 60u + static_cast<unsigned>(d), 0.7);
      const auto agg = kinematics::phase_aggregates(p, path::endpoint_coupling(p));
      for (int k = 1; k < K; ++k) {
        const auto cm = kinematics::collapsed_momentum(p, k);
        for (int a = 0; a < d; ++a)
          tower = std::max(tower, test_support::sup_diff(agg.momentum[static_cast<std::size_t>(k)][a], cm[a]));
        const auto f = kinematics::forward_drift(p, k).values, b = kinematics::backward_drift(p, k).values;
        const auto c = kinematics::current_velocity(p, k), w = kinematics::osmotic_velocity(p, k);
        for (int z = 0; z < g.cells(); ++z) {
          const auto i = static_cast<std::size_t>(z);
          double lhs = 0.0, rhs = 0.0;
          for (int a = 0; a < d; ++a) {
            lhs += c[a][i] * c[a][i] + w[a][i] * w[a][i];
            rhs += 0.5 * (f[a][i] * f[a][i] + b[a][i] * b[a][i]);
          }
          para = std::max(para, std::abs(lhs - rhs) / std::max(1.0, rhs));
        }
      }
    }
    check(tower <= 1e-10, "tower collapse " + fmt("%.1e", tower));
    check(para <= 1e-12, "parallelogram " + fmt("%.1e", para));
  }
  // Moser push-forward in d = 1.
  {
    const auto phi = sine_mode_bump(torus::make_grid(1, 32), 2, 0.2, 1, 0.1, 0.9);
    const auto m = moser::moser_map(phi, 1, 8);
    check(m.pushforward_error <= 1e-6 && m.composition_error <= 1e-8, "moser push-forward " + fmt("%.1e", m.pushforward_error));
  }
  // Bistochastic marginals of every solve in this run.
  double worst = 0.0;
  bool converged = true;
  for (const auto& r : g_reports) {
    worst = std::max(worst, r.max_violation());
    converged = converged && r.converged;
  }
  check(converged && worst <= kTol, "solved marginals " + fmt("%.1e", worst));
  std::string detail = failed.empty() ? "all invariants hold" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  detail += " (" + std::to_string(g_reports.size()) + " solves, worst violation " + fmt("%.1e", worst) + ")";
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 trivial instance", criterion1},     {"2 oracle equivalence", criterion2}, {"3 envelope inequality", criterion3},
      {"4 pressure formula", criterion4},     {"5 girsanov identity", criterion5},  {"6 follmer residual", criterion6},
      {"7 convexity", criterion7},            {"8 structural invariants", criterion8},
  };
  const double limits[] = {10.0, 60.0, 300.0, 0.0, 0.0, 0.0, 0.0, 120.0};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limits[i] > 0.0 && secs > limits[i]) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", limits[i]) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
