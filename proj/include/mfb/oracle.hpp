#pragma once

// Reference values that do not go through the grid solver: a brute-force
// scan of 1D two-phase interfaces, the torsion function of the unit square,
// and exact cone fields.

#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "mfb/field_io.hpp"
#include "mfb/functional.hpp"

namespace mfb::oracle {

/// Piecewise-linear function on [0, 1] given by uniform samples, together
/// with exact antiderivatives of the half-source:
///   G1(x) = int_0^x g/2,  G2(x) = int_0^x G1,  Q(x) = int_0^x G1^2.
class HalfSourceIntegrals {
 public:
  explicit HalfSourceIntegrals(std::vector<double> samples) : g_(std::move(samples)) {
    if (g_.size() < 2) throw PreconditionError("oracle needs at least two samples");
    m_ = g_.size() - 1;
    dx_ = 1.0 / static_cast<double>(m_);
    g1_.assign(g_.size(), 0.0);
    g2_.assign(g_.size(), 0.0);
    q_.assign(g_.size(), 0.0);
    for (std::size_t k = 0; k < m_; ++k) {
      const auto [a, b, c] = partial(k, dx_);
      g1_[k + 1] = a;
      g2_[k + 1] = b;
      q_[k + 1] = c;
    }
  }

  /// (G1, G2, Q) at x in [0, 1].
  std::array<double, 3> at(double x) const {
    if (x <= 0.0) return {0.0, 0.0, 0.0};
    if (x >= 1.0) return {g1_[m_], g2_[m_], q_[m_]};
    auto k = static_cast<std::size_t>(x / dx_);
    if (k >= m_) k = m_ - 1;
    return partial(k, x - static_cast<double>(k) * dx_);
  }

 private:
  // Values at x_k + t for 0 <= t <= dx, from the values at x_k.
  std::array<double, 3> partial(std::size_t k, double t) const {
    const double gk = 0.5 * g_[k];
    const double slope = 0.5 * (g_[k + 1] - g_[k]) / dx_;
    const double g1k = g1_[k], g2k = g2_[k];
    auto G1 = [&](double s) { return g1k + gk * s + 0.5 * slope * s * s; };
    const double g2 = g2k + g1k * t + 0.5 * gk * t * t + slope * t * t * t / 6.0;
    // G1^2 is a quartic in s: three-point Gauss-Legendre is exact.
    static constexpr double nodes[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
    static constexpr double weights[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    double quad = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double s = 0.5 * t * (nodes[j] + 1.0);
      quad += weights[j] * G1(s) * G1(s);
    }
    return {G1(t), g2, q_[k] + 0.5 * t * quad};
  }

  std::vector<double> g_;
  std::size_t m_ = 0;
  double dx_ = 0.0;
  std::vector<double> g1_, g2_, q_;
};

/// E + M of the exact solution of -u'' = g/2 on (0, s), u(0) = u(s) = 0.
/// With u' = -G1 + G2(s)/s this equals -(Q(s) - G2(s)^2 / s).
inline double one_sided_value(const HalfSourceIntegrals& I, double s) {
  if (s <= 0.0) return 0.0;
  const auto [g1, g2, q] = I.at(s);
  return -(q - g2 * g2 / s);
}

struct TwoPhaseScan {
  double s_star = 0.0;  // interface location of the best candidate
  double j_star = 0.0;
  std::string kind;     // "interface", "phase1_fills", "phase2_fills" or "empty"
  std::vector<double> s_ties;  // every scanned s whose J ties with j_star
  std::vector<double> s;
  std::vector<double> j;
};

/// Scans interfaces s = k / s_grid, k = 0..s_grid: phase 1 on (0, s) and phase
/// 2 on (s, 1), each with its exact 1D solution, J(s) = (E+M)_1 + (E+M)_2 +
/// lambda1 s + lambda2 (1 - s). The empty pair (J = 0) is also a candidate.
/// Ties resolve to the smallest s; all tied s are listed in s_ties.
inline TwoPhaseScan two_phase_1d(const std::vector<double>& g1, const std::vector<double>& g2,
                                 double lambda1, double lambda2, int s_grid) {
  if (s_grid < 1000) throw PreconditionError("oracle scan needs at least 1000 interface samples");
  const HalfSourceIntegrals left(g1);
  const HalfSourceIntegrals right(std::vector<double>(g2.rbegin(), g2.rend()));
  TwoPhaseScan scan;
  scan.s.reserve(static_cast<std::size_t>(s_grid) + 1);
  scan.j.reserve(static_cast<std::size_t>(s_grid) + 1);
  scan.kind = "empty";
  scan.j_star = 0.0;
  for (int k = 0; k <= s_grid; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(s_grid);
    const double js = one_sided_value(left, s) + one_sided_value(right, 1.0 - s) +
                      lambda1 * s + lambda2 * (1.0 - s);
    scan.s.push_back(s);
    scan.j.push_back(js);
    if (js < scan.j_star) {
      scan.j_star = js;
      scan.s_star = s;
      scan.kind = k == 0 ? "phase2_fills" : (k == s_grid ? "phase1_fills" : "interface");
    }
  }
  if (scan.kind != "empty") {
    const double tie = 1e-12 * (1.0 + std::abs(scan.j_star));
    for (std::size_t k = 0; k < scan.j.size(); ++k)
      if (scan.j[k] <= scan.j_star + tie) scan.s_ties.push_back(scan.s[k]);
  }
  return scan;
}

inline void write_scan_csv(std::ostream& os, const TwoPhaseScan& scan) {
  os << "s,J\n";
  for (std::size_t k = 0; k < scan.s.size(); ++k)
    os << format_double(scan.s[k]) << ',' << format_double(scan.j[k]) << '\n';
}

/// Torsion function of (0,1)^2 (-Lap w = 1, w = 0 on the boundary) as the
/// double sine series  sum_{m,n odd} 16 sin(m pi x) sin(n pi y) / (pi^4 m n (m^2+n^2)),
/// truncated at m, n <= terms.
inline double torsion_square_double_series(double x, double y, int terms) {
  const double pi = std::numbers::pi;
  double acc = 0.0;
  for (int m = 1; m <= terms; m += 2) {
    const double sm = std::sin(m * pi * x);
    for (int n = 1; n <= terms; n += 2) {
      acc += 16.0 * sm * std::sin(n * pi * y) /
             (pi * pi * pi * pi * m * n * (static_cast<double>(m) * m + static_cast<double>(n) * n));
    }
  }
  return acc;
}

/// The same series with the n-sum carried out in closed form:
///   w = x(1-x)/2 - sum_{m odd} 4 sin(m pi x) cosh(m pi (y - 1/2)) / (pi^3 m^3 cosh(m pi / 2)).
/// Terms are added until the next one is below 1e-8 * 1e-3, or `max_terms`.
inline double torsion_square(double x, double y, int max_terms = 201) {
  const double pi = std::numbers::pi;
  double acc = 0.5 * x * (1.0 - x);
  for (int m = 1; m <= max_terms; m += 2) {
    const double md = m;
    // cosh ratio written with exponentials to stay finite for large m.
    const double ratio = (std::exp(md * pi * (y - 1.0)) + std::exp(-md * pi * y)) /
                         (1.0 + std::exp(-md * pi));
    const double term = 4.0 * std::sin(md * pi * x) * ratio / (pi * pi * pi * md * md * md);
    acc -= term;
    if (4.0 * ratio / (pi * pi * pi * md * md * md) < 1e-11) break;
  }
  return acc;
}

/// Maximum of the unit-square torsion function (attained at the center).
inline double torsion_square_reference() { return torsion_square(0.5, 0.5); }

struct OnePhaseCone {
  double a = 1.0;
  Point e{1.0, 0.0, 0.0};
};

struct TwoPhaseCone {
  double a1 = 1.0;
  double a2 = 1.0;
  Point e{1.0, 0.0, 0.0};
};

using ConeKind = std::variant<OnePhaseCone, TwoPhaseCone>;

/// Exact cones about the hyperplane through the bounding-box center with
/// normal e: v_1 = a max(0, <x - c, e>) and, for two phases,
/// v_2 = a2 max(0, -<x - c, e>).
inline PhaseField make_cone(const ConeKind& kind, const GridPtr& grid) {
  const Point center = grid->box_center();
  const int dim = grid->dim();
  auto check_unit = [&](const Point& e) {
    if (std::abs(std::sqrt(dot(e, e, dim)) - 1.0) > 1e-12)
      throw PreconditionError("cone normal must be a unit vector");
  };
  auto height = [&](const Point& x, const Point& e) {
    Point rel{};
    for (int d = 0; d < dim; ++d) rel[d] = x[d] - center[d];
    return dot(rel, e, dim);
  };
  PhaseField out;
  if (const auto* one = std::get_if<OnePhaseCone>(&kind)) {
    check_unit(one->e);
    if (!(one->a > 0.0)) throw PreconditionError("cone slope must be positive");
    out.u.push_back(ScalarField::from_function(
        grid, [&](const Point& x) { return one->a * std::max(0.0, height(x, one->e)); }));
    return out;
  }
  const auto& two = std::get<TwoPhaseCone>(kind);
  check_unit(two.e);
  if (!(two.a1 > 0.0) || !(two.a2 > 0.0)) throw PreconditionError("cone slopes must be positive");
  out.u.push_back(ScalarField::from_function(
      grid, [&](const Point& x) { return two.a1 * std::max(0.0, height(x, two.e)); }));
  out.u.push_back(ScalarField::from_function(
      grid, [&](const Point& x) { return two.a2 * std::max(0.0, -height(x, two.e)); }));
  return out;
}

/// Labels each cell by the phase that is positive there (0 where none is).
inline Partition support_partition(const PhaseField& u) {
  Partition w(u.grid_ptr(), u.num_phases());
  for (std::size_t c = 0; c < w.size(); ++c)
    for (int i = 0; i < u.num_phases(); ++i)
      if (u[i][c] != 0.0) w[c] = i + 1;
  return w;
}

}  // namespace mfb::oracle
