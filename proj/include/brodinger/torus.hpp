#pragma once

// Discrete flat torus T^d (d = 1, 2) with unit side: uniform grids, centered
// periodic difference operators, wrapped-Gaussian heat kernels and a spectral
// Poisson solver built on the exact symbol of the discrete Laplacian.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "brodinger/errors.hpp"

namespace brodinger::torus {

/// Uniform grid on the unit torus; cells are indexed row-major with axis 0 slowest.
struct GridSpec {
  int d = 1;
  int n = 4;

  int cells() const { return d == 1 ? n : n * n; }
  double h() const { return 1.0 / n; }
  double cell_measure() const { return d == 1 ? h() : h() * h(); }

  std::array<int, 2> coords(int index) const {
    if (d == 1) return {index, 0};
    return {index / n, index % n};
  }
  int index(std::array<int, 2> c) const {
    const int i = ((c[0] % n) + n) % n;
    if (d == 1) return i;
    const int j = ((c[1] % n) + n) % n;
    return i * n + j;
  }
  /// Cell reached from `index` by `offset` cells along `axis` (periodic).
  int shifted(int index, int axis, int offset) const {
    auto c = coords(index);
    c[axis] += offset;
    return this->index(c);
  }
  /// Index of the displacement `to - from`, as a cell of the displacement torus.
  int displacement(int from, int to) const {
    const auto a = coords(from);
    const auto b = coords(to);
    return index({b[0] - a[0], b[1] - a[1]});
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Validated grid: d in {1, 2}, n >= 4 and even.
inline GridSpec make_grid(int d, int n) {
  detail::require(d == 1 || d == 2, "make_grid: dimension must be 1 or 2");
  detail::require(n >= 4, "make_grid: need at least 4 points per axis, got " + std::to_string(n));
  detail::require(n % 2 == 0, "make_grid: points per axis must be even, got " + std::to_string(n));
  return GridSpec{d, n};
}

/// Signed coordinate of a displacement of `m` cells, reduced to [-1/2, 1/2).
inline double wrap_displacement(const GridSpec& g, int m) {
  m = ((m % g.n) + g.n) % g.n;
  if (2 * m >= g.n) m -= g.n;
  return m * g.h();
}

/// Nearest-representative lift of a displacement of `m` cells. The antipodal
/// displacement (m = n/2) has two nearest lifts, +1/2 and -1/2; it is lifted
/// to their mean 0 so that lifted increments of symmetric kernels have zero mean.
inline double symmetric_lift(const GridSpec& g, int m) {
  m = ((m % g.n) + g.n) % g.n;
  if (2 * m == g.n) return 0.0;
  if (2 * m > g.n) m -= g.n;
  return m * g.h();
}

struct ScalarField {
  GridSpec grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(GridSpec g, double fill = 0.0)
      : grid(g), values(static_cast<std::size_t>(g.cells()), fill) {}
  ScalarField(GridSpec g, std::vector<double> v) : grid(g), values(std::move(v)) {
    detail::require(static_cast<int>(values.size()) == g.cells(), "ScalarField: size mismatch");
  }

  double& operator[](int i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return values[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(values.size()); }
};

struct VectorField {
  GridSpec grid;
  std::vector<std::vector<double>> components;  // components[axis][cell]

  VectorField() = default;
  explicit VectorField(GridSpec g, double fill = 0.0)
      : grid(g),
        components(static_cast<std::size_t>(g.d),
                   std::vector<double>(static_cast<std::size_t>(g.cells()), fill)) {}

  std::vector<double>& operator[](int axis) { return components[static_cast<std::size_t>(axis)]; }
  const std::vector<double>& operator[](int axis) const {
    return components[static_cast<std::size_t>(axis)];
  }
};

/// Spatial mean (cell average) of a field.
inline double mean(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) s += v;
  return s / f.size();
}

/// Integral over the torus: sum of values times the cell measure.
inline double integral(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) s += v;
  return s * f.grid.cell_measure();
}

inline double sup_norm(const ScalarField& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::abs(v));
  return m;
}

inline double sup_norm(const VectorField& v) {
  double m = 0.0;
  for (const auto& c : v.components)
    for (double x : c) m = std::max(m, std::abs(x));
  return m;
}

/// Discrete L2 norm sqrt(sum |v|^2 h^d).
inline double l2_norm(const VectorField& v) {
  double s = 0.0;
  for (const auto& c : v.components)
    for (double x : c) s += x * x;
  return std::sqrt(s * v.grid.cell_measure());
}

inline double l2_norm(const ScalarField& f) {
  double s = 0.0;
  for (double x : f.values) s += x * x;
  return std::sqrt(s * f.grid.cell_measure());
}

/// Same field translated by a whole number of cells along each axis.
inline ScalarField translate(const ScalarField& f, std::array<int, 2> offset) {
  ScalarField out(f.grid);
  for (int i = 0; i < f.size(); ++i) {
    auto c = f.grid.coords(i);
    out[f.grid.index({c[0] + offset[0], c[1] + offset[1]})] = f[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Centered periodic differences

/// (grad f)_j(x) = (f(x + h e_j) - f(x - h e_j)) / (2h).
inline VectorField gradient(const ScalarField& f) {
  const auto& g = f.grid;
  VectorField out(g);
  const double inv2h = 0.5 / g.h();
  for (int axis = 0; axis < g.d; ++axis)
    for (int i = 0; i < g.cells(); ++i)
      out[axis][static_cast<std::size_t>(i)] =
          (f[g.shifted(i, axis, 1)] - f[g.shifted(i, axis, -1)]) * inv2h;
  return out;
}

/// Negative adjoint of `gradient`: sum f div(v) = -sum <grad f, v> exactly.
inline ScalarField divergence(const VectorField& v) {
  const auto& g = v.grid;
  ScalarField out(g);
  const double inv2h = 0.5 / g.h();
  for (int axis = 0; axis < g.d; ++axis) {
    const auto& c = v[axis];
    for (int i = 0; i < g.cells(); ++i)
      out[i] += (c[static_cast<std::size_t>(g.shifted(i, axis, 1))] -
                 c[static_cast<std::size_t>(g.shifted(i, axis, -1))]) *
                inv2h;
  }
  return out;
}

/// Discrete Laplacian, defined as divergence of gradient (wide stencil).
inline ScalarField laplacian(const ScalarField& f) { return divergence(gradient(f)); }

// ---------------------------------------------------------------------------
// Fourier transforms on the grid (unnormalized forward, normalized inverse)

namespace detail {

using brodinger::detail::require;

inline void fft_axis(std::vector<std::complex<double>>& data, const GridSpec& g, int axis,
                     bool inverse) {
  Eigen::FFT<double> fft;
  const int n = g.n;
  std::vector<std::complex<double>> line(static_cast<std::size_t>(n)), out;
  const int lines = g.cells() / n;
  for (int l = 0; l < lines; ++l) {
    auto at = [&](int m) {
      if (g.d == 1) return m;
      return axis == 0 ? m * n + l : l * n + m;
    };
    for (int m = 0; m < n; ++m) line[static_cast<std::size_t>(m)] = data[static_cast<std::size_t>(at(m))];
    if (inverse)
      fft.inv(out, line);
    else
      fft.fwd(out, line);
    for (int m = 0; m < n; ++m) data[static_cast<std::size_t>(at(m))] = out[static_cast<std::size_t>(m)];
  }
}

}  // namespace detail

inline std::vector<std::complex<double>> forward_dft(const ScalarField& f) {
  std::vector<std::complex<double>> data(f.values.begin(), f.values.end());
  for (int axis = 0; axis < f.grid.d; ++axis) detail::fft_axis(data, f.grid, axis, false);
  return data;
}

inline ScalarField inverse_dft(const GridSpec& g, std::vector<std::complex<double>> data) {
  for (int axis = 0; axis < g.d; ++axis) detail::fft_axis(data, g, axis, true);
  ScalarField out(g);
  for (int i = 0; i < g.cells(); ++i) out[i] = data[static_cast<std::size_t>(i)].real();
  return out;
}

/// Fourier symbol of `laplacian` at the mode with integer frequencies `k`.
inline double laplacian_symbol(const GridSpec& g, std::array<int, 2> k) {
  double s = 0.0;
  for (int axis = 0; axis < g.d; ++axis) {
    const double sn = std::sin(2.0 * std::numbers::pi * k[static_cast<std::size_t>(axis)] * g.h());
    s -= sn * sn;
  }
  return s / (g.h() * g.h());
}

struct PoissonDiagnostics {
  double removed_mean = 0.0;       // spatial mean subtracted from the right-hand side
  double removed_null_norm = 0.0;  // L2 norm of the rhs component lying in ker(laplacian)
};

/// Zero-mean solution of laplacian(u) = rhs, solved with the stencil's exact symbol.
/// The centered Laplacian also annihilates the checkerboard modes (every
/// frequency in {0, n/2}); those rhs components cannot be matched and are
/// dropped, u has no component there, and their norm is reported.
inline ScalarField poisson_solve(const ScalarField& rhs, PoissonDiagnostics* diag = nullptr) {
  const auto& g = rhs.grid;
  auto hat = forward_dft(rhs);
  double null_sq = 0.0;
  const double tiny = 1e-10 / (g.h() * g.h());
  for (int i = 0; i < g.cells(); ++i) {
    const auto c = g.coords(i);
    const double sym = laplacian_symbol(g, c);
    auto& v = hat[static_cast<std::size_t>(i)];
    if (std::abs(sym) < tiny) {
      if (i != 0) null_sq += std::norm(v);
      v = 0.0;
    } else {
      v /= sym;
    }
  }
  if (diag) {
    diag->removed_mean = mean(rhs);
    // Parseval: sum |f|^2 h^d = sum |fhat|^2 h^d / cells.
    diag->removed_null_norm = std::sqrt(null_sq * g.cell_measure() / g.cells());
  }
  return inverse_dft(g, std::move(hat));
}

// ---------------------------------------------------------------------------
// Heat kernels

/// Transition density q_s(z) of Brownian motion of generator (nu/2) Laplacian,
/// sampled at grid displacements; sum_z q_s(z) h^d = 1.
struct HeatKernel {
  GridSpec grid;
  double nu = 0.0;
  double s = 0.0;
  std::vector<double> values;  // indexed by displacement cell

  double operator[](int displacement) const { return values[static_cast<std::size_t>(displacement)]; }
  /// Density of moving from cell `from` to cell `to`.
  double between(int from, int to) const { return (*this)[grid.displacement(from, to)]; }
};

namespace detail {

/// Wrapped 1D Gaussian density of variance t at z in [-1/2, 1/2).
inline double wrapped_gaussian(double z, double t) {
  constexpr double pi = std::numbers::pi;
  if (t < 0.25) {
    // Image sum; terms beyond |m| > M are below exp(-37) relative.
    const int m_max = static_cast<int>(std::ceil(std::sqrt(74.0 * t))) + 1;
    double s = 0.0;
    for (int m = -m_max; m <= m_max; ++m) {
      const double y = z + m;
      s += std::exp(-y * y / (2.0 * t));
    }
    return s / std::sqrt(2.0 * pi * t);
  }
  // Fourier (theta) series converges fast for large t.
  double s = 1.0;
  for (int k = 1; k < 1000; ++k) {
    const double term = 2.0 * std::exp(-2.0 * pi * pi * k * k * t);
    s += term * std::cos(2.0 * pi * k * z);
    if (term < 1e-18) break;
  }
  return s;
}

}  // namespace detail

inline HeatKernel heat_kernel(const GridSpec& g, double nu, double s) {
  detail::require(nu > 0.0, "heat_kernel: diffusivity must be positive");
  detail::require(s > 0.0, "heat_kernel: elapsed time must be positive");
  const double t = nu * s;
  std::vector<double> line(static_cast<std::size_t>(g.n));
  double mass = 0.0;
  for (int m = 0; m < g.n; ++m) {
    line[static_cast<std::size_t>(m)] = detail::wrapped_gaussian(wrap_displacement(g, m), t);
    mass += line[static_cast<std::size_t>(m)];
  }
  mass *= g.h();
  for (double& v : line) v /= mass;
  // Symmetrize exactly: the sampled values at +z and -z must be bitwise equal.
  for (int m = 1; m < g.n / 2; ++m) line[static_cast<std::size_t>(g.n - m)] = line[static_cast<std::size_t>(m)];

  HeatKernel k{g, nu, s, std::vector<double>(static_cast<std::size_t>(g.cells()))};
  for (int i = 0; i < g.cells(); ++i) {
    const auto c = g.coords(i);
    double v = line[static_cast<std::size_t>(c[0])];
    if (g.d == 2) v *= line[static_cast<std::size_t>(c[1])];
    k.values[static_cast<std::size_t>(i)] = v;
  }
  return k;
}

/// Discrete convolution (k1 * k2)(z) = sum_z' k1(z') k2(z - z') h^d.
inline HeatKernel semigroup_compose(const HeatKernel& k1, const HeatKernel& k2) {
  detail::require(k1.grid == k2.grid, "semigroup_compose: grid mismatch");
  detail::require(std::abs(k1.nu - k2.nu) <= 1e-14 * std::max(1.0, std::abs(k1.nu)),
                  "semigroup_compose: diffusivity mismatch");
  const auto& g = k1.grid;
  HeatKernel out{g, k1.nu, k1.s + k2.s, std::vector<double>(static_cast<std::size_t>(g.cells()), 0.0)};
  for (int z = 0; z < g.cells(); ++z) {
    double acc = 0.0;
    for (int zp = 0; zp < g.cells(); ++zp) acc += k1[zp] * k2[g.displacement(zp, z)];
    out.values[static_cast<std::size_t>(z)] = acc * g.cell_measure();
  }
  return out;
}

/// q composed with itself `times` times (times >= 1).
inline HeatKernel compose_power(const HeatKernel& q, int times) {
  detail::require(times >= 1, "compose_power: need at least one factor");
  HeatKernel out = q;
  for (int i = 1; i < times; ++i) out = semigroup_compose(out, q);
  return out;
}

}  // namespace brodinger::torus
