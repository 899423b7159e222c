#pragma once

// Named endpoint couplings.

#include <cmath>
#include <numbers>

#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::generators {

using entropy::Coupling;
using torus::GridSpec;

/// Endpoint law of the reference chain R^nu with K steps.
inline Coupling reference_coupling(const GridSpec& g, double nu, int steps) {
  return path::endpoint_coupling(path::reference_measure(g, nu, steps));
}

inline Coupling product(const GridSpec& g) { return entropy::product_coupling(g); }

struct ShearParams {
  double amplitude = 0.15;  // peak displacement of the shift profile
  double width = 0.1;       // standard deviation of the mollifier
};

/// Mollified shift coupling: gamma(x, y) proportional to G_width(y - x - v(x)) with
/// v(x) = amplitude cos(2 pi x_1) e_last, balanced to exact bistochasticity.
inline Coupling shear(const GridSpec& g, const ShearParams& s = {}) {
  brodinger::detail::require(s.width > 0.0, "shear: mollifier width must be positive");
  brodinger::detail::require(std::abs(s.amplitude) < 0.5, "shear: amplitude must be below half a period");
  const int m = g.cells();
  const int last = g.d - 1;
  Matrix v(m, m);
  for (int x = 0; x < m; ++x) {
    const auto cx = g.coords(x);
    const double shift = s.amplitude * std::cos(2.0 * std::numbers::pi * cx[0] * g.h());
    for (int y = 0; y < m; ++y) {
      const auto cy = g.coords(y);
      double w = 1.0;
      for (int a = 0; a < g.d; ++a) {
        double z = torus::wrap_displacement(g, cy[static_cast<std::size_t>(a)] - cx[static_cast<std::size_t>(a)]);
        if (a == last) z -= shift;
        z -= std::round(z);
        w *= torus::detail::wrapped_gaussian(z, s.width * s.width);
      }
      v(x, y) = w;
    }
  }
  return entropy::sinkhorn_balance(Coupling(g, v));
}

}  // namespace brodinger::generators
