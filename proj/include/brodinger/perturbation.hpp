#pragma once

// Density perturbations phi_k on interior slices: zero spatial mean, compact
// support in time. Targets (1 + eps phi_k) Leb feed the relaxed solver.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "brodinger/errors.hpp"
#include "brodinger/torus.hpp"

namespace brodinger {

struct PerturbationField {
  torus::GridSpec grid;
  int steps = 0;
  std::vector<torus::ScalarField> slices;  // k = 0..K; slices outside [k_min, k_max] are zero
  int k_min = 1;
  int k_max = 1;

  const torus::ScalarField& operator[](int k) const { return slices[static_cast<std::size_t>(k)]; }

  PerturbationField scaled(double eps) const {
    PerturbationField out = *this;
    for (auto& s : out.slices)
      for (double& v : s.values) v *= eps;
    return out;
  }

  bool is_zero() const {
    for (const auto& s : slices)
      for (double v : s.values)
        if (v != 0.0) return false;
    return true;
  }
};

inline PerturbationField zero_perturbation(const torus::GridSpec& g, int steps) {
  return PerturbationField{g, steps, std::vector<torus::ScalarField>(static_cast<std::size_t>(steps + 1), torus::ScalarField(g)), 1,
                           steps - 1};
}

/// Checks support, zero spatial mean per slice (1e-13) and finiteness.
inline void validate_perturbation(const PerturbationField& phi) {
  detail::require(static_cast<int>(phi.slices.size()) == phi.steps + 1, "perturbation: expected K+1 slices");
  detail::require(phi.k_min >= 1 && phi.k_max <= phi.steps - 1 && phi.k_min <= phi.k_max,
                  "perturbation: support window must lie strictly inside (0, K)");
  for (int k = 0; k <= phi.steps; ++k) {
    const auto& s = phi[k];
    detail::require(s.grid == phi.grid, "perturbation: grid mismatch");
    const bool inside = k >= phi.k_min && k <= phi.k_max;
    for (double v : s.values) {
      if (!std::isfinite(v)) throw NumericalError("perturbation: non-finite value");
      if (!inside && v != 0.0) throw PreconditionError("perturbation: nonzero slice outside support window");
    }
    if (std::abs(torus::mean(s)) > 1e-13)
      throw PreconditionError("perturbation: slice " + std::to_string(k) + " has nonzero spatial mean");
  }
}

/// Smooth bump on (a, b), 1 at the midpoint, exactly 0 outside.
inline double smooth_bump(double t, double a, double b) {
  if (t <= a || t >= b) return 0.0;
  const double u = (2.0 * t - a - b) / (b - a);
  return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

/// phi_k(x) = amplitude sin(2 pi mode x_1) bump(t_k) with bump supported in (t_lo, t_hi).
inline PerturbationField sine_mode_bump(const torus::GridSpec& g, int steps, double amplitude, int mode,
                                        double t_lo = 0.2, double t_hi = 0.8) {
  detail::require(0.0 < t_lo && t_lo < t_hi && t_hi < 1.0, "sine_bump: need 0 < t_lo < t_hi < 1");
  detail::require(mode >= 1 && 2 * mode < g.n, "sine_bump: mode must lie in [1, N/2)");
  PerturbationField phi = zero_perturbation(g, steps);
  int lo = steps, hi = 0;
  for (int k = 1; k < steps; ++k) {
    const double b = smooth_bump(static_cast<double>(k) / steps, t_lo, t_hi);
    if (b == 0.0) continue;
    lo = std::min(lo, k);
    hi = std::max(hi, k);
    auto& s = phi.slices[static_cast<std::size_t>(k)];
    for (int i = 0; i < g.cells(); ++i) {
      const double x = g.coords(i)[0] * g.h();
      s[i] = amplitude * b * std::sin(2.0 * std::numbers::pi * mode * x);
    }
  }
  detail::require(lo <= hi, "sine_bump: bump window contains no interior slice");
  phi.k_min = lo;
  phi.k_max = hi;
  return phi;
}

/// phi_k(x) = amplitude sin(2 pi x_1) bump(t_k).
inline PerturbationField sine_bump(const torus::GridSpec& g, int steps, double amplitude, double t_lo = 0.2,
                                   double t_hi = 0.8) {
  return sine_mode_bump(g, steps, amplitude, 1, t_lo, t_hi);
}

}  // namespace brodinger
