#pragma once

// Density perturbations: the N norm, per-slice maps pushing Leb onto
// (1 + phi_k) Leb, the push-forward competitor of a trajectory, and the
// envelope check comparing optimal-value increments with the pressure pairing.
//
// d = 1 maps are monotone rearrangements built from the exact cumulative
// function of the trigonometric interpolant of 1 + phi_k. d = 2 maps follow
// Moser's flow X' = -grad u / (1 + s phi), lap u = phi, integrated with RK4.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <future>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "brodinger/bregman.hpp"
#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/perturbation.hpp"
#include "brodinger/pressure.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::moser {

using entropy::Coupling;
using entropy::TrajectoryFields;
using torus::GridSpec;
using torus::ScalarField;
using torus::VectorField;

using Point = std::array<double, 2>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// The N norm

namespace detail {

using brodinger::detail::require;

/// sup over cells and entries (a, b) of |D_a D_b f|, centered first differences.
inline double hessian_sup(const ScalarField& f) {
  const auto& g = f.grid;
  const auto first = torus::gradient(f);
  double m = 0.0;
  for (int a = 0; a < g.d; ++a) {
    const auto second = torus::gradient(ScalarField(g, first[a]));
    for (int b = 0; b < g.d; ++b) m = std::max(m, torus::sup_norm(ScalarField(g, second[b])));
  }
  return m;
}

/// slices[k][component]; Hessian sup over everything plus the l2-in-time norm
/// of the slice-wise sup of the forward time difference.
inline double n_norm_components(const std::vector<std::vector<ScalarField>>& slices, double dt) {
  require(slices.size() >= 2 && dt > 0.0, "n_norm: need at least two slices and dt > 0");
  double hess = 0.0;
  for (const auto& s : slices)
    for (const auto& c : s) hess = std::max(hess, hessian_sup(c));
  double tsum = 0.0;
  for (std::size_t k = 0; k + 1 < slices.size(); ++k) {
    double m = 0.0;
    for (std::size_t c = 0; c < slices[k].size(); ++c)
      for (int i = 0; i < slices[k][c].size(); ++i)
        m = std::max(m, std::abs(slices[k + 1][c][i] - slices[k][c][i]) / dt);
    tsum += dt * m * m;
  }
  return hess + std::sqrt(tsum);
}

}  // namespace detail

inline double n_norm(const PerturbationField& phi) {
  std::vector<std::vector<ScalarField>> s;
  for (const auto& f : phi.slices) s.push_back({f});
  return detail::n_norm_components(s, 1.0 / phi.steps);
}

inline double n_norm(const std::vector<VectorField>& v, double dt) {
  std::vector<std::vector<ScalarField>> s;
  for (const auto& f : v) {
    std::vector<ScalarField> comps;
    for (int a = 0; a < f.grid.d; ++a) comps.emplace_back(f.grid, f[a]);
    s.push_back(std::move(comps));
  }
  return detail::n_norm_components(s, dt);
}

// ---------------------------------------------------------------------------
// Interpolation

namespace detail {

/// Real trigonometric interpolant of n equispaced samples on [0, 1):
/// f(y) = a_0 + sum_{m=1}^{n/2} a_m cos(2 pi m y) + b_m sin(2 pi m y).
struct TrigSeries {
  std::vector<double> a, b;

  double value(double y) const {
    double s = a[0];
    for (std::size_t m = 1; m < a.size(); ++m) {
      const double w = kTwoPi * static_cast<double>(m) * y;
      s += a[m] * std::cos(w) + b[m] * std::sin(w);
    }
    return s;
  }
  /// Periodic antiderivative of f - a_0.
  double antiderivative(double y) const {
    double s = 0.0;
    for (std::size_t m = 1; m < a.size(); ++m) {
      const double k = kTwoPi * static_cast<double>(m);
      s += (a[m] * std::sin(k * y) - b[m] * std::cos(k * y)) / k;
    }
    return s;
  }
};

inline TrigSeries trig_series(const std::vector<double>& samples) {
  const int n = static_cast<int>(samples.size());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(samples.begin(), samples.end()), out;
  fft.fwd(out, in);
  TrigSeries t{std::vector<double>(static_cast<std::size_t>(n / 2 + 1)), std::vector<double>(static_cast<std::size_t>(n / 2 + 1))};
  t.a[0] = out[0].real() / n;
  for (int m = 1; m <= n / 2; ++m) {
    const auto c = out[static_cast<std::size_t>(m)];
    const double scale = 2 * m == n ? 1.0 : 2.0;
    t.a[static_cast<std::size_t>(m)] = scale * c.real() / n;
    t.b[static_cast<std::size_t>(m)] = 2 * m == n ? 0.0 : -scale * c.imag() / n;
  }
  return t;
}

/// Spectral refinement of one axis of a row-major n0 x n1 array.
inline std::vector<double> refine_axis(const std::vector<double>& data, int n0, int n1, int axis, int factor) {
  const int n = axis == 0 ? n0 : n1;
  const int big = n * factor;
  const int lines = axis == 0 ? n1 : n0;
  const int r0 = axis == 0 ? big : n0, r1 = axis == 0 ? n1 : big;
  std::vector<double> out(static_cast<std::size_t>(r0) * r1);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> line(static_cast<std::size_t>(n)), coef, wide(static_cast<std::size_t>(big)), back;
  for (int l = 0; l < lines; ++l) {
    for (int m = 0; m < n; ++m)
      line[static_cast<std::size_t>(m)] = axis == 0 ? data[static_cast<std::size_t>(m) * n1 + l] : data[static_cast<std::size_t>(l) * n1 + m];
    fft.fwd(coef, line);
    std::fill(wide.begin(), wide.end(), std::complex<double>(0.0));
    for (int m = 0; m < n / 2; ++m) wide[static_cast<std::size_t>(m)] = coef[static_cast<std::size_t>(m)];
    for (int m = 1; m < n / 2; ++m) wide[static_cast<std::size_t>(big - m)] = coef[static_cast<std::size_t>(n - m)];
    wide[static_cast<std::size_t>(n / 2)] = 0.5 * coef[static_cast<std::size_t>(n / 2)];
    wide[static_cast<std::size_t>(big - n / 2)] = 0.5 * coef[static_cast<std::size_t>(n / 2)];
    fft.inv(back, wide);
    for (int m = 0; m < big; ++m) {
      const double v = back[static_cast<std::size_t>(m)].real() * factor;
      if (axis == 0)
        out[static_cast<std::size_t>(m) * r1 + l] = v;
      else
        out[static_cast<std::size_t>(l) * r1 + m] = v;
    }
  }
  return out;
}

}  // namespace detail

/// Trigonometric interpolant of f sampled on a grid `factor` times finer.
inline ScalarField refine_spectral(const ScalarField& f, int factor) {
  const auto& g = f.grid;
  detail::require(factor >= 1, "refine_spectral: factor must be positive");
  const auto fine = torus::make_grid(g.d, g.n * factor);
  if (factor == 1) return f;
  if (g.d == 1) return ScalarField(fine, detail::refine_axis(f.values, g.n, 1, 0, factor));
  auto a = detail::refine_axis(f.values, g.n, g.n, 0, factor);
  return ScalarField(fine, detail::refine_axis(a, g.n * factor, g.n, 1, factor));
}

/// Periodic 4-point cubic interpolation of lattice values at an arbitrary point.
inline double cubic_interpolate(const GridSpec& g, const std::vector<double>& v, Point p) {
  double w[2][4] = {};
  int base[2] = {0, 0};
  for (int a = 0; a < g.d; ++a) {
    const double s = p[static_cast<std::size_t>(a)] * g.n;
    const double fl = std::floor(s);
    const double t = s - fl;
    base[a] = static_cast<int>(fl);
    w[a][0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    w[a][1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    w[a][2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    w[a][3] = (t + 1.0) * t * (t - 1.0) / 6.0;
  }
  if (g.d == 1) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += w[0][i] * v[static_cast<std::size_t>(g.index({base[0] + i - 1, 0}))];
    return s;
  }
  double s = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      s += w[0][i] * w[1][j] * v[static_cast<std::size_t>(g.index({base[0] + i - 1, base[1] + j - 1}))];
  return s;
}

// ---------------------------------------------------------------------------
// Maps

/// psi(x) = x + zeta(x) pushes Leb onto (1 + phi_k) Leb; phimap(y) = y + xi(y) is its inverse.
/// Both displacements are stored on the evaluation lattice `fine`.
struct SliceMap {
  int k = 0;
  GridSpec fine;
  VectorField zeta;
  VectorField xi;
  double pushforward_error = 0.0;
  double composition_error = 0.0;
  double min_jacobian = 1.0;

  Point forward(Point x) const { return displace(zeta, x); }
  Point inverse(Point y) const { return displace(xi, y); }

 private:
  Point displace(const VectorField& d, Point x) const {
    Point out = x;
    for (int a = 0; a < fine.d; ++a) out[static_cast<std::size_t>(a)] += cubic_interpolate(fine, d[a], x);
    return out;
  }
};

struct MoserMaps {
  GridSpec grid;
  int steps = 0;
  int refinement = 1;
  std::vector<SliceMap> slices;  // k = 0..K; identity where phi_k = 0

  double max_pushforward_error() const {
    double m = 0.0;
    for (const auto& s : slices) m = std::max(m, s.pushforward_error);
    return m;
  }
  double max_composition_error() const {
    double m = 0.0;
    for (const auto& s : slices) m = std::max(m, s.composition_error);
    return m;
  }
};

namespace detail {

inline Point node(const GridSpec& g, int i) {
  const auto c = g.coords(i);
  return {c[0] * g.h(), g.d == 2 ? c[1] * g.h() : 0.0};
}

inline SliceMap identity_map(const GridSpec& fine, int k) {
  return SliceMap{k, fine, VectorField(fine), VectorField(fine), 0.0, 0.0, 1.0};
}

/// max over nodes of |x - psi(phimap(x))| and |x - phimap(psi(x))| using the stored fields.
inline double composition_error(const SliceMap& m) {
  double e = 0.0;
  for (int i = 0; i < m.fine.cells(); ++i) {
    const Point x = node(m.fine, i);
    const Point a = m.forward(m.inverse(x)), b = m.inverse(m.forward(x));
    for (int j = 0; j < m.fine.d; ++j) {
      const auto u = static_cast<std::size_t>(j);
      e = std::max({e, std::abs(a[u] - x[u]), std::abs(b[u] - x[u])});
    }
  }
  return e;
}

/// Spectral gradient of lattice values; the Nyquist mode is dropped.
inline VectorField spectral_gradient(const ScalarField& f) {
  const auto& g = f.grid;
  const auto hat = torus::forward_dft(f);
  VectorField out(g);
  for (int a = 0; a < g.d; ++a) {
    std::vector<std::complex<double>> d(hat.size());
    for (int i = 0; i < g.cells(); ++i) {
      auto c = g.coords(i);
      int m = c[static_cast<std::size_t>(a)];
      if (2 * m == g.n) continue;
      if (2 * m > g.n) m -= g.n;
      d[static_cast<std::size_t>(i)] = std::complex<double>(0.0, kTwoPi * m) * hat[static_cast<std::size_t>(i)];
    }
    out[a] = torus::inverse_dft(g, d).values;
  }
  return out;
}

/// Jacobian determinant of x + disp(x) at every node.
inline std::vector<double> jacobian(const GridSpec& g, const VectorField& disp) {
  std::vector<VectorField> grads;
  for (int a = 0; a < g.d; ++a) grads.push_back(spectral_gradient(ScalarField(g, disp[a])));
  std::vector<double> det(static_cast<std::size_t>(g.cells()));
  for (int i = 0; i < g.cells(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (g.d == 1) {
      det[u] = 1.0 + grads[0][0][u];
    } else {
      det[u] = (1.0 + grads[0][0][u]) * (1.0 + grads[1][1][u]) - grads[0][1][u] * grads[1][0][u];
    }
  }
  return det;
}

inline SliceMap map_1d(const ScalarField& phi, int k, int refinement) {
  const auto fine = torus::make_grid(1, phi.grid.n * refinement);
  const auto series = trig_series(phi.values);
  const int m = fine.cells();
  SliceMap out = identity_map(fine, k);
  // phimap(y) = y + Phi(y), Phi the zero-mean antiderivative of phi; psi = phimap^{-1}.
  auto cdf = [&](double y) { return y + series.antiderivative(y); };
  std::vector<double> psi(static_cast<std::size_t>(m + 1));
  for (int i = 0; i < m; ++i) {
    const double x = i * fine.h();
    out.xi[0][static_cast<std::size_t>(i)] = series.antiderivative(x);
    double y = x - series.antiderivative(x);
    for (int it = 0; it < 100; ++it) {
      const double r = cdf(y) - x;
      const double slope = 1.0 + series.value(y);
      if (!(slope > 0.0)) throw NumericalError("moser_map: cumulative function is not increasing at slice " + std::to_string(k));
      y -= r / slope;
      if (std::abs(r) < 1e-15) break;
    }
    psi[static_cast<std::size_t>(i)] = y;
    out.zeta[0][static_cast<std::size_t>(i)] = y - x;
  }
  psi[static_cast<std::size_t>(m)] = psi[0] + 1.0;
  // Average densities of psi#Leb and of (1 + phi) Leb over each image interval.
  double err = 0.0, min_step = 1.0;
  for (int i = 0; i < m; ++i) {
    const double lo = psi[static_cast<std::size_t>(i)], hi = psi[static_cast<std::size_t>(i + 1)];
    const double w = hi - lo;
    if (!(w > 0.0)) throw NumericalError("moser_map: monotone lift broke at slice " + std::to_string(k));
    const double target = (cdf(hi) - cdf(lo)) / w;
    err = std::max(err, std::abs(fine.h() / w - target));
    min_step = std::min(min_step, w / fine.h());
  }
  out.pushforward_error = err;
  out.min_jacobian = min_step;
  out.composition_error = composition_error(out);
  return out;
}

inline SliceMap map_2d(const ScalarField& phi, int k, int refinement) {
  const auto fphi = refine_spectral(phi, refinement);
  const auto& fine = fphi.grid;
  const int m = fine.cells();
  // Spectral lap u = phi and grad u on the evaluation lattice.
  auto hat = torus::forward_dft(fphi);
  std::vector<std::complex<double>> gx(hat.size()), gy(hat.size());
  for (int i = 0; i < m; ++i) {
    auto c = fine.coords(i);
    for (auto& v : c)
      if (2 * v > fine.n) v -= fine.n;
    const double k0 = kTwoPi * c[0], k1 = kTwoPi * c[1];
    const double s = k0 * k0 + k1 * k1;
    const auto u = s == 0.0 ? std::complex<double>(0.0) : -hat[static_cast<std::size_t>(i)] / s;
    const bool nyq0 = 2 * c[0] == fine.n, nyq1 = 2 * c[1] == fine.n;
    gx[static_cast<std::size_t>(i)] = nyq0 ? 0.0 : std::complex<double>(0.0, k0) * u;
    gy[static_cast<std::size_t>(i)] = nyq1 ? 0.0 : std::complex<double>(0.0, k1) * u;
  }
  const auto ux = torus::inverse_dft(fine, gx), uy = torus::inverse_dft(fine, gy);
  auto velocity = [&](double s, Point x) {
    const double den = 1.0 + s * cubic_interpolate(fine, fphi.values, x);
    return Point{-cubic_interpolate(fine, ux.values, x) / den, -cubic_interpolate(fine, uy.values, x) / den};
  };
  constexpr int steps = 32;
  auto flow = [&](Point x, bool backward) {
    const double ds = (backward ? -1.0 : 1.0) / steps;
    double s = backward ? 1.0 : 0.0;
    for (int i = 0; i < steps; ++i) {
      const auto k1 = velocity(s, x);
      const auto k2 = velocity(s + 0.5 * ds, {x[0] + 0.5 * ds * k1[0], x[1] + 0.5 * ds * k1[1]});
      const auto k3 = velocity(s + 0.5 * ds, {x[0] + 0.5 * ds * k2[0], x[1] + 0.5 * ds * k2[1]});
      const auto k4 = velocity(s + ds, {x[0] + ds * k3[0], x[1] + ds * k3[1]});
      for (std::size_t a = 0; a < 2; ++a) x[a] += ds * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]) / 6.0;
      s += ds;
    }
    return x;
  };
  SliceMap out = identity_map(fine, k);
  for (int i = 0; i < m; ++i) {
    const Point x = node(fine, i);
    const Point f = flow(x, false), b = flow(x, true);
    for (int a = 0; a < 2; ++a) {
      out.zeta[a][static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(a)] - x[static_cast<std::size_t>(a)];
      out.xi[a][static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(a)] - x[static_cast<std::size_t>(a)];
    }
  }
  const auto det = jacobian(fine, out.zeta);
  out.min_jacobian = *std::min_element(det.begin(), det.end());
  if (!(out.min_jacobian > 0.0))
    throw NumericalError("moser_map: flow map is not invertible at slice " + std::to_string(k) +
                         " (min Jacobian " + std::to_string(out.min_jacobian) + ")");
  double err = 0.0;
  for (int i = 0; i < m; ++i) {
    const Point y = out.forward(node(fine, i));
    err = std::max(err, std::abs(1.0 / det[static_cast<std::size_t>(i)] - (1.0 + cubic_interpolate(fine, fphi.values, y))));
  }
  out.pushforward_error = err;
  out.composition_error = composition_error(out);
  return out;
}

}  // namespace detail

/// Map pair for slice k of phi on an evaluation lattice `refinement` times finer than the grid.
inline SliceMap moser_map(const PerturbationField& phi, int k, int refinement = 8) {
  detail::require(k >= 0 && k <= phi.steps, "moser_map: slice out of range");
  detail::require(refinement >= 1, "moser_map: refinement must be positive");
  const auto& s = phi[k];
  if (std::abs(torus::mean(s)) > 1e-13) throw PreconditionError("moser_map: slice " + std::to_string(k) + " has nonzero mean");
  for (int i = 0; i < s.size(); ++i)
    if (!(1.0 + s[i] > 0.0))
      throw PreconditionError("moser_map: density 1 + phi is not positive at cell " + std::to_string(i) + " of slice " +
                              std::to_string(k));
  const auto fine = torus::make_grid(phi.grid.d, phi.grid.n * refinement);
  bool zero = true;
  for (double v : s.values) zero = zero && v == 0.0;
  if (zero) return detail::identity_map(fine, k);
  return phi.grid.d == 1 ? detail::map_1d(s, k, refinement) : detail::map_2d(s, k, refinement);
}

inline MoserMaps moser_maps(const PerturbationField& phi, int refinement = 8) {
  validate_perturbation(phi);
  MoserMaps out{phi.grid, phi.steps, refinement, {}};
  for (int k = 0; k <= phi.steps; ++k) out.slices.push_back(moser_map(phi, k, refinement));
  return out;
}

/// Displacements sampled on the base grid, one VectorField per slice.
inline std::vector<VectorField> base_displacements(const MoserMaps& maps, bool forward) {
  std::vector<VectorField> out;
  for (const auto& s : maps.slices) {
    VectorField v(maps.grid);
    const auto& src = forward ? s.zeta : s.xi;
    for (int i = 0; i < maps.grid.cells(); ++i) {
      const auto c = maps.grid.coords(i);
      const int j = s.fine.index({c[0] * maps.refinement, c[1] * maps.refinement});
      for (int a = 0; a < maps.grid.d; ++a) v[a][static_cast<std::size_t>(i)] = src[a][static_cast<std::size_t>(j)];
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// (N(xi) + N(zeta)) / N(phi).
inline double displacement_ratio(const PerturbationField& phi, const MoserMaps& maps) {
  const double dt = 1.0 / phi.steps;
  const double n = n_norm(phi);
  detail::require(n > 0.0, "displacement_ratio: phi is zero");
  return (n_norm(base_displacements(maps, true), dt) + n_norm(base_displacements(maps, false), dt)) / n;
}

struct Calibration {
  double constant = 0.0;
  std::vector<double> ratios;
};

/// Largest displacement ratio over the family amplitude sin(2 pi mode x) bump(t).
inline Calibration calibrate_constant(const GridSpec& g, int steps, const std::vector<double>& amplitudes,
                                      const std::vector<int>& modes, int refinement = 8) {
  Calibration c;
  for (double a : amplitudes)
    for (int m : modes) {
      const auto phi = sine_mode_bump(g, steps, a, m);
      c.ratios.push_back(displacement_ratio(phi, moser_maps(phi, refinement)));
      c.constant = std::max(c.constant, c.ratios.back());
    }
  return c;
}

// ---------------------------------------------------------------------------
// Competitor

namespace detail {

inline std::vector<std::vector<double>> displacement_gradients(const SliceMap& m, bool forward) {
  const auto& d = forward ? m.zeta : m.xi;
  std::vector<std::vector<double>> out;  // entry a * dim + b = D_b d_a
  for (int a = 0; a < m.fine.d; ++a) {
    const auto g = spectral_gradient(ScalarField(m.fine, d[a]));
    for (int b = 0; b < m.fine.d; ++b) out.push_back(g[b]);
  }
  return out;
}

}  // namespace detail

/// rho^phi_k(x) = rho_k(phimap_k(x)) det D phimap_k(x),
/// c^phi_k(x) = d_t psi(t_k, y) + D psi_k(y) c_k(y) with y = phimap_k(x).
inline TrajectoryFields pushforward_competitor(const TrajectoryFields& in, const MoserMaps& maps) {
  const auto& g = in.grid;
  const int d = g.d;
  detail::require(g == maps.grid, "pushforward_competitor: grid mismatch");
  detail::require(in.slices() == maps.steps + 1 && static_cast<int>(in.c.size()) == in.slices(),
                  "pushforward_competitor: need K+1 density and velocity slices");
  for (const auto& r : in.rho)
    for (double v : r.values)
      if (!(v > 0.0)) throw PreconditionError("pushforward_competitor: density must be strictly positive");
  const int K = maps.steps;
  TrajectoryFields out{g, in.dt, std::vector<ScalarField>(static_cast<std::size_t>(K + 1), ScalarField(g)),
                       std::vector<VectorField>(static_cast<std::size_t>(K + 1), VectorField(g))};
  for (int k = 0; k <= K; ++k) {
    const auto& map = maps.slices[static_cast<std::size_t>(k)];
    const auto& fine = map.fine;
    const auto dxi = detail::jacobian(fine, map.xi);
    const auto dzeta = detail::displacement_gradients(map, true);
    const int kp = std::min(k + 1, K), km = std::max(k - 1, 0);
    const double span = (kp - km) * in.dt;
    for (int i = 0; i < g.cells(); ++i) {
      const auto c = g.coords(i);
      const int j = fine.index({c[0] * maps.refinement, c[1] * maps.refinement});
      const Point x = detail::node(g, i);
      const Point y = map.inverse(x);
      for (int a = 0; a < d; ++a)
        if (!std::isfinite(y[static_cast<std::size_t>(a)])) throw NumericalError("pushforward_competitor: map evaluation failed");
      out.rho[static_cast<std::size_t>(k)][i] =
          cubic_interpolate(g, in.rho[static_cast<std::size_t>(k)].values, y) * dxi[static_cast<std::size_t>(j)];
      const Point up = maps.slices[static_cast<std::size_t>(kp)].forward(y);
      const Point dn = maps.slices[static_cast<std::size_t>(km)].forward(y);
      std::array<double, 2> cy{0.0, 0.0};
      for (int a = 0; a < d; ++a) cy[static_cast<std::size_t>(a)] = cubic_interpolate(g, in.c[static_cast<std::size_t>(k)][a], y);
      for (int a = 0; a < d; ++a) {
        double v = (up[static_cast<std::size_t>(a)] - dn[static_cast<std::size_t>(a)]) / span;
        for (int b = 0; b < d; ++b) {
          const double jac = (a == b ? 1.0 : 0.0) + cubic_interpolate(fine, dzeta[static_cast<std::size_t>(a * d + b)], y);
          v += jac * cy[static_cast<std::size_t>(b)];
        }
        out.c[static_cast<std::size_t>(k)][a][static_cast<std::size_t>(i)] = v;
      }
    }
  }
  return out;
}

/// sup over interior slices of |rho_{k+1} - rho_{k-1} + 2 dt div(rho_k c_k)|.
inline double continuity_residual(const TrajectoryFields& t) {
  double r = 0.0;
  for (int k = 1; k + 1 < t.slices(); ++k) {
    VectorField m(t.grid);
    for (int a = 0; a < t.grid.d; ++a)
      for (int i = 0; i < t.grid.cells(); ++i)
        m[a][static_cast<std::size_t>(i)] = t.rho[static_cast<std::size_t>(k)][i] * t.c[static_cast<std::size_t>(k)][a][static_cast<std::size_t>(i)];
    const auto dv = torus::divergence(m);
    for (int i = 0; i < t.grid.cells(); ++i)
      r = std::max(r, std::abs(t.rho[static_cast<std::size_t>(k + 1)][i] - t.rho[static_cast<std::size_t>(k - 1)][i] +
                               2.0 * t.dt * dv[i]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Envelope check

struct EnvelopeConfig {
  bregman::SolverConfig solver;
  double slack = 1e-6;
  std::vector<double> convexity_eps{-2e-2, -1e-2, 0.0, 1e-2, 2e-2};
  double convexity_tol = 1e-8;
  bool parallel = true;
};

struct EnvelopeRow {
  double eps = 0.0;
  double h_plus = 0.0;      // h_star(eps phi)
  double h_minus = 0.0;     // h_star(-eps phi)
  double delta = 0.0;       // h_plus - h0
  double pairing = 0.0;     // <p, eps phi>
  double margin = 0.0;      // delta - pairing
  bool inequality = false;  // margin >= -slack
  double slope = 0.0;       // (h_plus - h_minus) / (2 eps)
  double mismatch = 0.0;    // |slope - <p, phi>| / |<p, phi>|
};

struct EnvelopeReport {
  double h0 = 0.0;
  double unit_pairing = 0.0;  // <p, phi>
  double n_norm_phi = 0.0;
  std::vector<EnvelopeRow> rows;
  std::vector<double> convexity_eps;
  std::vector<double> convexity_values;
  std::vector<double> second_differences;
  bool inequality_holds = true;
  bool mismatch_shrinks = true;  // mismatch nondecreasing in eps
  bool convex = true;

  const EnvelopeRow* row(double eps) const {
    for (const auto& r : rows)
      if (std::abs(r.eps - eps) <= 1e-15 * std::max(1.0, std::abs(eps))) return &r;
    return nullptr;
  }
  double min_second_difference() const {
    return second_differences.empty() ? 0.0 : *std::min_element(second_differences.begin(), second_differences.end());
  }
};

/// Optimal-value increments along eps phi against the pairing with an extracted pressure p.
inline EnvelopeReport envelope_check(const Coupling& gamma, const pressure::PressureField& p, const PerturbationField& phi,
                                     std::vector<double> eps_list, const EnvelopeConfig& cfg) {
  validate_perturbation(phi);
  detail::require(!eps_list.empty(), "envelope_check: empty epsilon list");
  detail::require(cfg.solver.steps == phi.steps && p.steps == phi.steps, "envelope_check: K mismatch");
  std::sort(eps_list.begin(), eps_list.end());
  EnvelopeReport rep;
  rep.n_norm_phi = n_norm(phi);
  for (double e : eps_list) {
    if (!(e > 0.0)) throw PreconditionError("envelope_check: epsilons must be positive");
    if (e * rep.n_norm_phi > 0.5)
      throw PreconditionError("envelope_check: eps N(phi) = " + std::to_string(e * rep.n_norm_phi) + " exceeds 1/2");
  }
  rep.unit_pairing = pressure::pairing(p, phi);

  std::vector<double> needed{0.0};
  for (double e : eps_list) {
    needed.push_back(e);
    needed.push_back(-e);
  }
  for (double e : cfg.convexity_eps) needed.push_back(e);
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  for (double e : needed) {
    // Infeasible densities are reported before any solve starts.
    if (e != 0.0) bregman::perturbed_targets(phi.scaled(e));
  }

  std::map<double, double> value;
  auto solve_one = [&](double e) {
    return e == 0.0 ? bregman::h_star(gamma, zero_perturbation(phi.grid, phi.steps), cfg.solver)
                    : bregman::h_star(gamma, phi.scaled(e), cfg.solver);
  };
  if (cfg.parallel) {
    std::vector<std::future<double>> jobs;
    for (double e : needed) jobs.push_back(std::async(std::launch::async, solve_one, e));
    for (std::size_t i = 0; i < needed.size(); ++i) value[needed[i]] = jobs[i].get();
  } else {
    for (double e : needed) value[e] = solve_one(e);
  }

  rep.h0 = value.at(0.0);
  for (double e : eps_list) {
    EnvelopeRow r;
    r.eps = e;
    r.h_plus = value.at(e);
    r.h_minus = value.at(-e);
    r.delta = r.h_plus - rep.h0;
    r.pairing = e * rep.unit_pairing;
    r.margin = r.delta - r.pairing;
    r.inequality = r.margin >= -cfg.slack;
    r.slope = (r.h_plus - r.h_minus) / (2.0 * e);
    r.mismatch = std::abs(r.slope - rep.unit_pairing) / std::max(std::abs(rep.unit_pairing), 1e-300);
    rep.inequality_holds = rep.inequality_holds && r.inequality;
    rep.rows.push_back(r);
  }
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    rep.mismatch_shrinks = rep.mismatch_shrinks && rep.rows[i - 1].mismatch <= rep.rows[i].mismatch;

  rep.convexity_eps = cfg.convexity_eps;
  for (double e : cfg.convexity_eps) rep.convexity_values.push_back(value.at(e));
  for (std::size_t i = 1; i + 1 < rep.convexity_values.size(); ++i) {
    const double h1 = cfg.convexity_eps[i] - cfg.convexity_eps[i - 1], h2 = cfg.convexity_eps[i + 1] - cfg.convexity_eps[i];
    detail::require(std::abs(h1 - h2) <= 1e-12 * std::max(std::abs(h1), 1e-300), "envelope_check: convexity grid must be uniform");
    const double d2 = rep.convexity_values[i - 1] - 2.0 * rep.convexity_values[i] + rep.convexity_values[i + 1];
    rep.second_differences.push_back(d2);
    rep.convex = rep.convex && d2 >= -cfg.convexity_tol;
  }
  return rep;
}

}  // namespace brodinger::moser
