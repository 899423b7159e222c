#pragma once

// Plain-text field, coupling and potential files plus CSV report writers.
// Every file starts with one header line "brodinger <kind> key=value ...";
// numbers are written with 17 significant digits so reads round-trip exactly.

#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "brodinger/bregman.hpp"
#include "brodinger/entropy.hpp"
#include "brodinger/errors.hpp"
#include "brodinger/moser.hpp"
#include "brodinger/path_measure.hpp"
#include "brodinger/perturbation.hpp"
#include "brodinger/pressure.hpp"
#include "brodinger/torus.hpp"

namespace brodinger::io {

using entropy::Coupling;
using torus::GridSpec;
using torus::ScalarField;

struct Header {
  std::string kind;
  std::map<std::string, std::string> keys;

  double number(const std::string& key) const {
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("io: header lacks '" + key + "'");
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ConfigError("io: header value '" + key + "' is not a number");
    }
  }
  int integer(const std::string& key) const { return static_cast<int>(number(key)); }
};

namespace detail {

inline std::ostream& precise(std::ostream& out) { return out << std::setprecision(17); }

inline Header read_header(std::istream& in, const std::string& expected) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("io: empty input, expected " + expected);
  std::istringstream ls(line);
  std::string tag;
  Header h;
  ls >> tag >> h.kind;
  if (tag != "brodinger" || h.kind != expected)
    throw ConfigError("io: expected a '" + expected + "' file, found header '" + line + "'");
  std::string kv;
  while (ls >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("io: malformed header entry '" + kv + "'");
    h.keys[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return h;
}

inline std::vector<double> read_values(std::istream& in, std::size_t count, const std::string& what) {
  std::vector<double> v(count);
  for (auto& x : v) {
    std::string tok;
    if (!(in >> tok)) throw ConfigError("io: " + what + " truncated");
    try {
      x = std::stod(tok);  // accepts inf and -inf
    } catch (const std::exception&) {
      throw ConfigError("io: " + what + " has a non-numeric entry '" + tok + "'");
    }
  }
  return v;
}

inline GridSpec header_grid(const Header& h) {
  try {
    return torus::make_grid(h.integer("d"), h.integer("n"));
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("io: ") + e.what());
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("io: cannot write " + path);
  detail::precise(f);
  return f;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("io: cannot read " + path);
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fields and couplings

inline void write_field(std::ostream& out, const ScalarField& f) {
  detail::precise(out) << "brodinger field d=" << f.grid.d << " n=" << f.grid.n << "\n";
  for (int i = 0; i < f.size(); ++i) out << f[i] << ((i + 1) % f.grid.n == 0 ? "\n" : " ");
}

inline ScalarField read_field(std::istream& in) {
  const auto h = detail::read_header(in, "field");
  const auto g = detail::header_grid(h);
  return ScalarField(g, detail::read_values(in, static_cast<std::size_t>(g.cells()), "field"));
}

/// Density values per cell, rows indexed by the first variable.
inline void write_coupling(std::ostream& out, const Coupling& c) {
  detail::precise(out) << "brodinger coupling d=" << c.grid.d << " n=" << c.grid.n << "\n";
  for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.values.cols(); ++j) out << c.values(i, j) << (j + 1 == c.values.cols() ? "\n" : " ");
  }
}

inline Coupling read_coupling(std::istream& in) {
  const auto h = detail::read_header(in, "coupling");
  const auto g = detail::header_grid(h);
  const auto v = detail::read_values(in, static_cast<std::size_t>(g.cells()) * g.cells(), "coupling");
  Matrix m(g.cells(), g.cells());
  for (int i = 0; i < g.cells(); ++i)
    for (int j = 0; j < g.cells(); ++j) m(i, j) = v[static_cast<std::size_t>(i) * g.cells() + j];
  return Coupling(g, std::move(m));
}

inline Coupling read_coupling_file(const std::string& path) {
  auto f = detail::open_in(path);
  return read_coupling(f);
}

/// Log potentials of a factored measure: log eta, then log a_k for k = 0..K.
inline void write_potentials(std::ostream& out, const path::FactoredPathMeasure& p) {
  const auto& g = p.grid();
  detail::precise(out) << "brodinger potentials d=" << g.d << " n=" << g.n << " K=" << p.steps() << " nu=" << p.nu()
                       << "\n";
  const auto& le = p.log_eta();
  for (Eigen::Index i = 0; i < le.rows(); ++i)
    for (Eigen::Index j = 0; j < le.cols(); ++j) out << le(i, j) << (j + 1 == le.cols() ? "\n" : " ");
  for (int k = 0; k <= p.steps(); ++k)
    for (int z = 0; z < g.cells(); ++z) out << p.log_a(k)[z] << (z + 1 == g.cells() ? "\n" : " ");
}

inline path::FactoredPathMeasure read_potentials(std::istream& in) {
  const auto h = detail::read_header(in, "potentials");
  const auto g = detail::header_grid(h);
  const int K = h.integer("K");
  const int m = g.cells();
  const auto le = detail::read_values(in, static_cast<std::size_t>(m) * m, "potentials");
  Matrix eta(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) eta(i, j) = le[static_cast<std::size_t>(i) * m + j];
  std::vector<ScalarField> la;
  for (int k = 0; k <= K; ++k) la.emplace_back(g, detail::read_values(in, static_cast<std::size_t>(m), "potentials"));
  return path::FactoredPathMeasure(path::make_chain(g, h.number("nu"), K), std::move(eta), std::move(la));
}

/// Perturbation slices k = 0..K with the support window in the header.
inline void write_perturbation(std::ostream& out, const PerturbationField& phi) {
  const auto& g = phi.grid;
  detail::precise(out) << "brodinger perturbation d=" << g.d << " n=" << g.n << " K=" << phi.steps
                       << " k_min=" << phi.k_min << " k_max=" << phi.k_max << "\n";
  for (const auto& s : phi.slices)
    for (int z = 0; z < g.cells(); ++z) out << s[z] << (z + 1 == g.cells() ? "\n" : " ");
}

inline PerturbationField read_perturbation(std::istream& in) {
  const auto h = detail::read_header(in, "perturbation");
  const auto g = detail::header_grid(h);
  PerturbationField phi{g, h.integer("K"), {}, h.integer("k_min"), h.integer("k_max")};
  for (int k = 0; k <= phi.steps; ++k)
    phi.slices.emplace_back(g, detail::read_values(in, static_cast<std::size_t>(g.cells()), "perturbation"));
  try {
    validate_perturbation(phi);
  } catch (const Error& e) {
    throw ConfigError(std::string("io: invalid perturbation file: ") + e.what());
  }
  return phi;
}

// ---------------------------------------------------------------------------
// CSV reports

inline void write_solver_csv(std::ostream& out, const bregman::SolverReport& r) {
  detail::precise(out) << "quantity,slice,value\n";
  out << "sweeps,," << r.sweeps << "\n";
  out << "converged,," << (r.converged ? 1 : 0) << "\n";
  out << "optimal_value,," << r.optimal_value << "\n";
  out << "coupling_violation,," << r.coupling_violation << "\n";
  out << "dual_monotone,," << (r.dual_monotone ? 1 : 0) << "\n";
  for (std::size_t k = 0; k < r.marginal_violation.size(); ++k)
    out << "marginal_violation," << k + 1 << "," << r.marginal_violation[k] << "\n";
}

inline void write_marginals_csv(std::ostream& out, const path::FactoredPathMeasure& p) {
  const auto& g = p.grid();
  detail::precise(out) << "k,cell,i0,i1,density\n";
  for (int k = 0; k <= p.steps(); ++k) {
    const auto rho = path::marginal(p, k);
    for (int z = 0; z < g.cells(); ++z) {
      const auto c = g.coords(z);
      out << k << "," << z << "," << c[0] << "," << c[1] << "," << rho[z] << "\n";
    }
  }
}

inline void write_pressure_csv(std::ostream& out, const pressure::PressureField& p) {
  const auto& g = p.grid;
  detail::precise(out) << "k,cell,i0,i1,pressure\n";
  for (int k = p.k_lo; k <= p.k_hi; ++k)
    for (int z = 0; z < g.cells(); ++z) {
      const auto c = g.coords(z);
      out << k << "," << z << "," << c[0] << "," << c[1] << "," << p[k][z] << "\n";
    }
}

inline void write_defect_csv(std::ostream& out, const pressure::PressureField& p) {
  detail::precise(out) << "k,solenoidal_defect,pressure_sup,poisson_null_norm\n";
  for (int k = p.k_lo; k <= p.k_hi; ++k)
    out << k << "," << p.solenoidal_defect[static_cast<std::size_t>(k)] << "," << torus::sup_norm(p[k]) << ","
        << p.poisson[static_cast<std::size_t>(k)].removed_null_norm << "\n";
}

inline void write_envelope_csv(std::ostream& out, const moser::EnvelopeReport& r) {
  detail::precise(out) << "eps,h_plus,h_minus,delta,pairing,margin,inequality,slope,unit_pairing,mismatch\n";
  for (const auto& row : r.rows)
    out << row.eps << "," << row.h_plus << "," << row.h_minus << "," << row.delta << "," << row.pairing << ","
        << row.margin << "," << (row.inequality ? 1 : 0) << "," << row.slope << "," << r.unit_pairing << ","
        << row.mismatch << "\n";
}

inline void write_convexity_csv(std::ostream& out, const moser::EnvelopeReport& r) {
  detail::precise(out) << "eps,h_star,second_difference\n";
  for (std::size_t i = 0; i < r.convexity_eps.size(); ++i) {
    out << r.convexity_eps[i] << "," << r.convexity_values[i] << ",";
    if (i >= 1 && i + 1 < r.convexity_eps.size()) out << r.second_differences[i - 1];
    out << "\n";
  }
}

}  // namespace brodinger::io
