#pragma once

// Momentum balance of the phase aggregates, Helmholtz extraction of the
// pressure, and the per-phase momentum diagnostic.

#include <cmath>
#include <string>
#include <vector>

#include "brodinger/errors.hpp"
#include "brodinger/kinematics.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/perturbation.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::pressure {

using kinematics::PhaseAggregates;
using kinematics::StressField;
using path::FactoredPathMeasure;
using torus::GridSpec;
using torus::ScalarField;
using torus::VectorField;

/// Vector fields on slices k_lo..k_hi; other slots are zero.
struct SliceResidual {
  GridSpec grid;
  int steps = 0;
  int k_lo = 0;
  int k_hi = -1;
  std::vector<VectorField> slices;
};

struct PressureField {
  GridSpec grid;
  int steps = 0;
  int k_lo = 0;
  int k_hi = -1;
  std::vector<ScalarField> slices;                   // K+1 slots, zero outside [k_lo, k_hi]
  std::vector<double> solenoidal_defect;             // K+1 slots
  std::vector<torus::PoissonDiagnostics> poisson;    // K+1 slots
  std::string gauge = "zero spatial mean in every slice";

  const ScalarField& operator[](int k) const { return slices[static_cast<std::size_t>(k)]; }
  double max_defect() const {
    double m = 0.0;
    for (int k = k_lo; k <= k_hi; ++k) m = std::max(m, solenoidal_defect[static_cast<std::size_t>(k)]);
    return m;
  }
  double sup_norm() const {
    double m = 0.0;
    for (const auto& s : slices) m = std::max(m, torus::sup_norm(s));
    return m;
  }
};

/// Row-wise divergence: (div S)_a = sum_b D_b S_ab.
inline VectorField divergence_rows(const StressField& s) {
  const auto& g = s.grid;
  VectorField out(g);
  for (int a = 0; a < g.d; ++a) {
    VectorField row(g);
    for (int b = 0; b < g.d; ++b)
      for (int z = 0; z < g.cells(); ++z) row[b][static_cast<std::size_t>(z)] = s(a, b, z);
    out[a] = torus::divergence(row).values;
  }
  return out;
}

/// r_k = (m_{k+1} - m_{k-1}) K / 2 + div-rows(S_k), for 2 <= k <= K-2.
inline SliceResidual momentum_residual(const PhaseAggregates& agg) {
  const int K = agg.steps;
  brodinger::detail::require(K - 3 >= 2, "momentum_residual: need at least three interior slices");
  const auto& g = agg.grid;
  SliceResidual r{g, K, 2, K - 2, std::vector<VectorField>(static_cast<std::size_t>(K + 1), VectorField(g))};
  for (int k = 2; k <= K - 2; ++k) {
    const auto ds = divergence_rows(agg.stress[static_cast<std::size_t>(k)]);
    const auto& up = agg.momentum[static_cast<std::size_t>(k + 1)];
    const auto& dn = agg.momentum[static_cast<std::size_t>(k - 1)];
    auto& out = r.slices[static_cast<std::size_t>(k)];
    for (int a = 0; a < g.d; ++a)
      for (int z = 0; z < g.cells(); ++z) {
        const auto i = static_cast<std::size_t>(z);
        out[a][i] = (up[a][i] - dn[a][i]) * 0.5 * K + ds[a][i];
      }
  }
  return r;
}

/// p_k = -poisson(div r_k); defect_k = |r_k + grad p_k| / max(|r_k|, 1e-14 N^{d/2}).
inline PressureField extract_pressure(const SliceResidual& r) {
  const auto& g = r.grid;
  PressureField p{g, r.steps, r.k_lo, r.k_hi,
                  std::vector<ScalarField>(static_cast<std::size_t>(r.steps + 1), ScalarField(g)),
                  std::vector<double>(static_cast<std::size_t>(r.steps + 1), 0.0),
                  std::vector<torus::PoissonDiagnostics>(static_cast<std::size_t>(r.steps + 1))};
  const double floor = 1e-14 * std::pow(static_cast<double>(g.n), 0.5 * g.d);
  for (int k = r.k_lo; k <= r.k_hi; ++k) {
    const auto& rk = r.slices[static_cast<std::size_t>(k)];
    auto u = torus::poisson_solve(torus::divergence(rk), &p.poisson[static_cast<std::size_t>(k)]);
    for (double& v : u.values) v = -v;
    const double mu = torus::mean(u);
    for (double& v : u.values) v -= mu;
    const auto gp = torus::gradient(u);
    VectorField sol(g);
    for (int a = 0; a < g.d; ++a)
      for (std::size_t i = 0; i < sol[a].size(); ++i) sol[a][i] = rk[a][i] + gp[a][i];
    p.solenoidal_defect[static_cast<std::size_t>(k)] = torus::l2_norm(sol) / std::max(torus::l2_norm(rk), floor);
    p.slices[static_cast<std::size_t>(k)] = std::move(u);
  }
  return p;
}

/// Full pipeline: aggregates of the solved measure, residual, pressure.
inline PressureField pressure_of(const FactoredPathMeasure& p) {
  return extract_pressure(momentum_residual(kinematics::phase_aggregates(p, path::endpoint_coupling(p))));
}

/// Pressure read off the interior potentials: nu K (log a_k - mean), the
/// sensitivity of nu H to the interior target densities.
inline PressureField dual_pressure(const FactoredPathMeasure& p) {
  const auto& g = p.grid();
  const int K = p.steps();
  PressureField out{g, K, 1, K - 1, std::vector<ScalarField>(static_cast<std::size_t>(K + 1), ScalarField(g)),
                    std::vector<double>(static_cast<std::size_t>(K + 1), 0.0),
                    std::vector<torus::PoissonDiagnostics>(static_cast<std::size_t>(K + 1))};
  for (int k = 1; k < K; ++k) {
    const double mu = torus::mean(p.log_a(k));
    auto& s = out.slices[static_cast<std::size_t>(k)];
    for (int z = 0; z < g.cells(); ++z) s[z] = p.nu() * K * (p.log_a(k)[z] - mu);
  }
  return out;
}

/// <p, phi> = sum_k dt sum_x p_k(x) phi_k(x) h^d.
inline double pairing(const PressureField& p, const PerturbationField& phi) {
  brodinger::detail::require(p.grid == phi.grid && p.steps == phi.steps, "pairing: shape mismatch");
  const double dt = 1.0 / p.steps;
  double s = 0.0;
  for (int k = 1; k < p.steps; ++k) {
    const bool covered = k >= p.k_lo && k <= p.k_hi;
    double acc = 0.0;
    bool charged = false;
    for (int z = 0; z < p.grid.cells(); ++z) {
      acc += p[k][z] * phi[k][z];
      charged = charged || phi[k][z] != 0.0;
    }
    if (charged && !covered) throw PreconditionError("pairing: perturbation charges slice " + std::to_string(k) + " without pressure");
    s += dt * acc * p.grid.cell_measure();
  }
  return s;
}

/// Space-time L2 norm over 2 <= k <= K-2 of
///   D_t(rho c) + Div(rho (c c - w w)) + (nu^2/4) Lap_h grad_h rho + rho grad_h p
/// for the phase (x, y), restricted to slices with t_lo <= k dt <= t_hi. Reported only.
inline double phase_momentum_diagnostic(const FactoredPathMeasure& p, const PressureField& pr, int x, int y,
                                        double t_lo = 0.0, double t_hi = 1.0) {
  const int K = p.steps();
  const auto& g = p.grid();
  const int d = g.d;
  brodinger::detail::require(pr.grid == g && pr.steps == K, "phase_momentum_diagnostic: shape mismatch");
  std::vector<kinematics::PhaseFields> ph;
  ph.reserve(static_cast<std::size_t>(K + 1));
  ph.emplace_back();
  for (int k = 1; k < K; ++k) ph.push_back(kinematics::phase_fields(p, x, y, k));
  const double nu = p.nu();
  double total = 0.0;
  for (int k = std::max(2, pr.k_lo); k <= std::min(K - 2, pr.k_hi); ++k) {
    const double t = static_cast<double>(k) / K;
    if (t < t_lo - 1e-12 || t > t_hi + 1e-12) continue;
    const auto& cur = ph[static_cast<std::size_t>(k)];
    const auto& up = ph[static_cast<std::size_t>(k + 1)];
    const auto& dn = ph[static_cast<std::size_t>(k - 1)];
    StressField st(g);
    for (int z = 0; z < g.cells(); ++z) {
      const auto i = static_cast<std::size_t>(z);
      for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b)
          st.at(a, b, z) = cur.rho[z] * (cur.c[a][i] * cur.c[b][i] - cur.w[a][i] * cur.w[b][i]);
    }
    const auto ds = divergence_rows(st);
    const auto grho = torus::gradient(cur.rho);
    const auto gp = torus::gradient(pr[k]);
    double s = 0.0;
    for (int a = 0; a < d; ++a) {
      const auto lap = torus::laplacian(ScalarField(g, grho[a]));
      for (int z = 0; z < g.cells(); ++z) {
        const auto i = static_cast<std::size_t>(z);
        const double dtm = (up.rho[z] * up.c[a][i] - dn.rho[z] * dn.c[a][i]) * 0.5 * K;
        const double res = dtm + ds[a][i] + 0.25 * nu * nu * lap[z] + cur.rho[z] * gp[a][i];
        s += res * res;
      }
    }
    total += s * g.cell_measure() / K;
  }
  return std::sqrt(total);
}

}  // namespace brodinger::pressure
