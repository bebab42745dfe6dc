#pragma once

// Local competitors of a computed pair (u, W) inside a ball, and an audit
// that runs them at a list of probes and records the change of J.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "mfb/elliptic.hpp"
#include "mfb/functional.hpp"

namespace mfb {

struct Competitor {
  PhaseField u;
  Partition w;
  double delta_j = 0.0;  // J(competitor) - J(original)
};

namespace detail {

/// 0 on [0, a r], linear on [a r, r], 1 beyond.
inline double cutoff_profile(double t, double a, double r) {
  if (t <= a * r) return 0.0;
  if (t >= r) return 1.0;
  return (t - a * r) / ((1.0 - a) * r);
}

/// Whether adding cell c to the trash lowers F, given it currently has `label`.
inline bool trash_pays(const FunctionalSpec& spec, int label, std::size_t c) {
  if (std::holds_alternative<PowerLaw>(spec.volume_term)) {
    const auto& p = std::get<PowerLaw>(spec.volume_term);
    return p.a > 0.0 || p.b > 0.0;
  }
  return std::get<PerRegion>(spec.volume_term).q[static_cast<std::size_t>(label - 1)][c] > 0.0;
}

}  // namespace detail

/// u_i* = phi(|x - x0|) u_i for i in `phases` (1-based), other phases kept.
/// Cells of B(x0, a r) whose label is in `phases` go to the black zone when
/// that lowers F.
inline Competitor cutoff_competitor(const PhaseField& u, const Partition& w,
                                    const FunctionalSpec& spec, const Point& x0, double r,
                                    double a, const std::vector<int>& phases) {
  if (!(a > 0.0 && a < 1.0)) throw PreconditionError("cut-off parameter a must lie in (0, 1)");
  if (!(r > 0.0)) throw PreconditionError("cut-off radius must be positive");
  const Grid& g = *spec.grid;
  std::vector<std::uint8_t> cut(static_cast<std::size_t>(spec.num_phases) + 1, 0);
  for (int p : phases) {
    if (p < 1 || p > spec.num_phases) throw PreconditionError("cut-off phase out of range");
    cut[static_cast<std::size_t>(p)] = 1;
  }
  Competitor out{u, w, 0.0};
  const double before = total(u, w, spec);
  const auto ball = ball_cells(g, x0, r);
  for (std::size_t c : ball.cells) {
    const double t = distance(g.center(c), x0, g.dim());
    const double phi = detail::cutoff_profile(t, a, r);
    for (int p = 1; p <= spec.num_phases; ++p)
      if (cut[static_cast<std::size_t>(p)]) out.u[p - 1][c] *= phi;
    const int l = w[c];
    if (phi == 0.0 && l > 0 && cut[static_cast<std::size_t>(l)] && detail::trash_pays(spec, l, c))
      out.w[c] = 0;
  }
  out.delta_j = total(out.u, out.w, spec) - before;
  return out;
}

/// Harmonic competitor around phase `main` (1-based). Every cell of B(x0, r)
/// reads its ray cell: the node nearest to x0 + (r + h/2) (x - x0)/|x - x0|.
/// In the annulus a r <= |x - x0| < r the label is copied from the ray
/// cell, `main` is copied and the other phases are copied times phi. Inside
/// B(x0, a r) every cell joins W_main, the other phases vanish and u_main is
/// the discrete harmonic function with the surrounding values as data.
inline Competitor harmonic_competitor(const PhaseField& u, const Partition& w,
                                      const FunctionalSpec& spec, const Point& x0, double r,
                                      double a, int main, double tol = 1e-12) {
  if (!(a >= 0.5 && a < 1.0)) throw PreconditionError("harmonic competitor needs 1/2 <= a < 1");
  if (main < 1 || main > spec.num_phases) throw PreconditionError("main phase out of range");
  const Grid& g = *spec.grid;
  const int dim = g.dim();
  const double h = g.spacing();
  const auto ball = ball_cells(g, x0, r);

  std::vector<std::size_t> source(ball.cells.size());
  for (std::size_t k = 0; k < ball.cells.size(); ++k) {
    const std::size_t c = ball.cells[k];
    if (!g.in_mask(c)) throw PreconditionError("harmonic competitor ball leaves the domain");
    bool edge_ok = true;
    g.for_each_neighbor(c, [&](std::size_t nb) { edge_ok = edge_ok && g.in_mask(nb); });
    if (!edge_ok) throw PreconditionError("harmonic competitor ball leaves the domain");
    const Point x = g.center(c);
    Point dir{};
    const double len = distance(x, x0, dim);
    if (len == 0.0)
      dir[0] = 1.0;
    else
      for (int d = 0; d < dim; ++d) dir[d] = (x[d] - x0[d]) / len;
    Point ray{};
    for (int d = 0; d < dim; ++d) ray[d] = x0[d] + (r + 0.5 * h) * dir[d];
    if (!g.in_bounding_box(ray)) throw PreconditionError("harmonic competitor ball leaves the domain");
    source[k] = g.nearest_cell(ray);
    if (!g.in_mask(source[k])) throw PreconditionError("harmonic competitor ball leaves the domain");
  }

  Competitor out{u, w, 0.0};
  const double before = total(u, w, spec);
  std::vector<std::uint8_t> inner(g.size(), 0);
  for (std::size_t k = 0; k < ball.cells.size(); ++k) {
    const std::size_t c = ball.cells[k];
    const std::size_t s = source[k];
    const double t = distance(g.center(c), x0, dim);
    const double phi = detail::cutoff_profile(t, a, r);
    if (t < a * r) {
      inner[c] = 1;
      out.w[c] = main;
      for (int p = 1; p <= spec.num_phases; ++p) out.u[p - 1][c] = 0.0;
      continue;
    }
    out.w[c] = w[s];
    for (int p = 1; p <= spec.num_phases; ++p)
      out.u[p - 1][c] = p == main ? u[p - 1][s] : phi * u[p - 1][s];
  }

  // Lap_h v = 0 on the inner ball; neighbors outside it act as data.
  const double inv_h2 = 1.0 / (h * h);
  const ScalarField& frame = out.u[main - 1];
  std::vector<double> rhs(g.size(), 0.0), zero(g.size(), 0.0);
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!inner[c]) continue;
    g.for_each_neighbor(c, [&](std::size_t nb) {
      if (!inner[nb]) rhs[c] += inv_h2 * frame[nb];
    });
  }
  const ScalarField v = solve_dirichlet(spec.grid, inner, zero, rhs, tol);
  const bool nonneg = spec.sign[static_cast<std::size_t>(main - 1)] == SignConstraint::nonnegative;
  for (std::size_t c = 0; c < g.size(); ++c)
    if (inner[c]) out.u[main - 1][c] = nonneg ? std::max(0.0, v[c]) : v[c];

  out.delta_j = total(out.u, out.w, spec) - before;
  return out;
}

struct Probe {
  Point x0{};
  double r = 0.0;
};

struct AuditEntry {
  std::size_t probe = 0;
  std::string kind;  // "cutoff" or "harmonic"
  double a = 0.0;
  std::vector<int> phases;  // cut set, or {main}
  double delta_j = 0.0;
};

struct AuditReport {
  std::vector<AuditEntry> entries;
  std::vector<std::string> notes;  // skipped constructions
  double min_delta_j = 0.0;
  std::size_t worst_probe = 0;
  std::string worst_kind;
};

/// Both competitors at every probe with a in {1/2, 3/4}: cut-offs over every
/// nonempty phase subset, harmonic competitors for every main phase.
inline AuditReport audit(const PhaseField& u, const Partition& w, const FunctionalSpec& spec,
                         const std::vector<Probe>& probes) {
  AuditReport rep;
  rep.min_delta_j = std::numeric_limits<double>::infinity();
  const int n = spec.num_phases;
  auto record = [&](AuditEntry e) {
    if (e.delta_j < rep.min_delta_j) {
      rep.min_delta_j = e.delta_j;
      rep.worst_probe = e.probe;
      rep.worst_kind = e.kind;
    }
    rep.entries.push_back(std::move(e));
  };
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const auto& pr = probes[k];
    for (double a : {0.5, 0.75}) {
      for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> set;
        for (int i = 0; i < n; ++i)
          if (mask & (1u << i)) set.push_back(i + 1);
        try {
          const auto c = cutoff_competitor(u, w, spec, pr.x0, pr.r, a, set);
          record({k, "cutoff", a, set, c.delta_j});
        } catch (const PreconditionError& e) {
          rep.notes.push_back("probe " + std::to_string(k) + " cutoff skipped: " + e.what());
        }
      }
      for (int m = 1; m <= n; ++m) {
        try {
          const auto c = harmonic_competitor(u, w, spec, pr.x0, pr.r, a, m);
          record({k, "harmonic", a, {m}, c.delta_j});
        } catch (const PreconditionError& e) {
          rep.notes.push_back("probe " + std::to_string(k) + " harmonic skipped: " + e.what());
        }
      }
    }
  }
  if (rep.entries.empty()) rep.min_delta_j = 0.0;
  return rep;
}

/// probe,kind,a,phases,delta_j
inline void write_audit_csv(std::ostream& os, const AuditReport& rep) {
  os << "probe,kind,a,phases,delta_j\n";
  for (const auto& e : rep.entries) {
    os << e.probe << ',' << e.kind << ',' << format_double(e.a) << ',';
    for (std::size_t k = 0; k < e.phases.size(); ++k) os << (k ? " " : "") << e.phases[k];
    os << ',' << format_double(e.delta_j) << '\n';
  }
}

}  // namespace mfb
