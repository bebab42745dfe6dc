#pragma once

// Read-only diagnostics on phase fields: radial energy, ACF and Weiss
// profiles, density ratios, the interface measure, slope laws, flatness,
// blow-ups, phase counts and Lipschitz quotients.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfb/field_io.hpp"
#include "mfb/functional.hpp"

namespace mfb {

/// phi = (index, sign): the signed part v = (sign * u_index)_+.
struct Phase {
  int index = 1;
  int sign = 1;
};

enum class ProfileKind { energy, acf, acf_product, weiss, flatness, density };

inline const char* to_string(ProfileKind k) {
  switch (k) {
    case ProfileKind::energy: return "energy";
    case ProfileKind::acf: return "acf";
    case ProfileKind::acf_product: return "acf_product";
    case ProfileKind::weiss: return "weiss";
    case ProfileKind::flatness: return "flatness";
    case ProfileKind::density: return "density";
  }
  return "unknown";
}

struct RadialProfile {
  std::vector<double> radii;
  std::vector<double> values;
  ProfileKind kind = ProfileKind::energy;
};

inline ScalarField phase_part(const PhaseField& u, Phase p) {
  if (p.index < 1 || p.index > u.num_phases()) throw PreconditionError("phase index out of range");
  if (p.sign != 1 && p.sign != -1) throw PreconditionError("phase sign must be +1 or -1");
  const ScalarField& ui = u[p.index - 1];
  ScalarField v(ui.grid_ptr());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = std::max(0.0, p.sign * ui[c]);
  return v;
}

namespace detail {

inline void check_radii(const Grid& g, const std::vector<double>& radii) {
  if (radii.empty()) throw PreconditionError("radius list is empty");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (!(radii[k] > 2.0 * g.spacing())) throw PreconditionError("radii must exceed 2h");
    if (k && !(radii[k] > radii[k - 1])) throw PreconditionError("radii must be increasing");
  }
}

/// Squared gradient at cell c: per axis, the mean of the squared forward and
/// backward differences. Values past the bounding box count as 0.
inline double cell_grad_sq(const ScalarField& v, std::size_t c) {
  const Grid& g = v.grid();
  const Index idx = g.unflatten(c);
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  double s = 0.0;
  for (int d = 0; d < g.dim(); ++d) {
    const auto st = static_cast<std::size_t>(g.stride(d));
    const double fwd = idx[d] + 1 < g.extent(d) ? v[c + st] : 0.0;
    const double bwd = idx[d] > 0 ? v[c - st] : 0.0;
    s += 0.5 * ((fwd - v[c]) * (fwd - v[c]) + (v[c] - bwd) * (v[c] - bwd));
  }
  return s * inv_h2;
}

inline Point offset(const Point& x, const Point& dir, double t, int dim) {
  Point p = x;
  for (int d = 0; d < dim; ++d) p[d] += t * dir[d];
  return p;
}

/// Points where the support of v ends: on each in-mask edge between a cell
/// with v > 0 and one with v <= 0, the zero of the linear interpolant of
/// `level` (or the nonpositive endpoint when `level` does not change sign).
struct BoundaryPoints {
  std::vector<Point> points;
};

inline BoundaryPoints boundary_points(const ScalarField& v, const ScalarField& level,
                                      const std::vector<std::size_t>& cells) {
  const Grid& g = v.grid();
  const int dim = g.dim();
  std::vector<std::uint8_t> in(g.size(), 0);
  for (std::size_t c : cells) in[c] = 1;
  BoundaryPoints out;
  for (std::size_t c : cells) {
    if (!g.in_mask(c)) continue;
    const Index idx = g.unflatten(c);
    for (int d = 0; d < dim; ++d) {
      if (idx[d] + 1 >= g.extent(d)) continue;
      const std::size_t b = c + static_cast<std::size_t>(g.stride(d));
      if (!in[b] || !g.in_mask(b)) continue;
      const bool pa = v[c] > 0.0, pb = v[b] > 0.0;
      if (pa == pb) continue;
      const std::size_t pos = pa ? c : b, neg = pa ? b : c;
      const double lp = level[pos], ln = level[neg];
      double t = 1.0;
      if (lp > 0.0 && ln < 0.0) t = lp / (lp - ln);
      const Point xp = g.center(pos), xn = g.center(neg);
      Point x{};
      for (int k = 0; k < dim; ++k) x[k] = xp[k] + t * (xn[k] - xp[k]);
      out.points.push_back(x);
    }
  }
  return out;
}

struct NormalFit {
  Point centroid{};
  Point normal{};
};

/// Total least squares hyperplane through `pts`.
inline NormalFit fit_normal(const std::vector<Point>& pts, int dim) {
  if (static_cast<int>(pts.size()) < std::max(2, dim))
    throw PreconditionError("too few free-boundary points for a normal fit");
  NormalFit fit;
  for (const auto& p : pts)
    for (int d = 0; d < dim; ++d) fit.centroid[d] += p[d];
  for (int d = 0; d < dim; ++d) fit.centroid[d] /= static_cast<double>(pts.size());
  if (dim == 1) {
    fit.normal[0] = 1.0;
    return fit;
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& p : pts)
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b)
        cov(a, b) += (p[a] - fit.centroid[a]) * (p[b] - fit.centroid[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto& ev = eig.eigenvalues();  // ascending
  if (!(ev(1) > 1e-12 * std::max(1.0, ev.sum())) || ev(1) - ev(0) <= 1e-12 * ev(1))
    throw PreconditionError("normal fit is rank-deficient");
  for (int d = 0; d < dim; ++d) fit.normal[d] = eig.eigenvectors()(d, 0);
  return fit;
}

/// Cells of the list where v > 0.
inline std::vector<std::size_t> positive_cells(const ScalarField& v,
                                               const std::vector<std::size_t>& cells) {
  std::vector<std::size_t> out;
  for (std::size_t c : cells)
    if (v[c] > 0.0) out.push_back(c);
  return out;
}

/// Orients `e` so that the cells in `side` lie mostly on the positive side.
inline void orient(NormalFit& fit, const Grid& g, const std::vector<std::size_t>& side) {
  double s = 0.0;
  for (std::size_t c : side) {
    const Point x = g.center(c);
    for (int d = 0; d < g.dim(); ++d) s += (x[d] - fit.centroid[d]) * fit.normal[d];
  }
  if (s < 0.0)
    for (int d = 0; d < g.dim(); ++d) fit.normal[d] = -fit.normal[d];
}

/// Whether some cell within 1.5 h of x0 has v > 0 and another has v <= 0.
inline bool near_free_boundary(const ScalarField& v, const Point& x0) {
  const Grid& g = v.grid();
  bool pos = false, nonpos = false;
  const auto ball = ball_cells(g, x0, 1.5 * g.spacing());
  for (std::size_t c : ball.cells) (v[c] > 0.0 ? pos : nonpos) = true;
  return pos && nonpos;
}

}  // namespace detail

/// E(r): edge energies whose midpoint lies inside B(x0, r).
inline RadialProfile radial_energy(const ScalarField& u, const Point& x0,
                                   const std::vector<double>& radii) {
  const Grid& g = u.grid();
  detail::check_radii(g, radii);
  const int dim = g.dim();
  const double h = g.spacing();
  const double scale = std::pow(h, dim - 2);
  std::vector<std::pair<double, double>> edges;  // (midpoint distance, energy)
  g.for_each_edge([&](std::size_t a, std::size_t b, int axis) {
    const double vb = b == Grid::kGhost ? 0.0 : u[b];
    const double diff = vb - u[a];
    if (diff == 0.0) return;
    Point m = g.center(a);
    const bool low = b == Grid::kGhost && g.unflatten(a)[axis] == 0;
    m[axis] += low ? -0.5 * h : 0.5 * h;
    edges.emplace_back(distance(m, x0, dim), diff * diff * scale);
  });
  RadialProfile p{radii, {}, ProfileKind::energy};
  for (double r : radii) {
    double e = 0.0;
    for (const auto& [t, en] : edges)
      if (t < r) e += en;
    p.values.push_back(e);
  }
  return p;
}

inline RadialProfile radial_energy(const PhaseField& u, const Point& x0,
                                   const std::vector<double>& radii) {
  RadialProfile p;
  for (const auto& ui : u.u) {
    auto q = radial_energy(ui, x0, radii);
    if (p.values.empty()) {
      p = std::move(q);
    } else {
      for (std::size_t k = 0; k < p.values.size(); ++k) p.values[k] += q.values[k];
    }
  }
  return p;
}

/// Phi(r) = r^-2 sum_{B(x0,r)} |grad v|^2 |x - x0|^(2-n) h^n, cells closer
/// than h/2 to x0 left out.
inline RadialProfile acf_profile(const PhaseField& u, Phase phase, const Point& x0,
                                 const std::vector<double>& radii) {
  const ScalarField v = phase_part(u, phase);
  const Grid& g = v.grid();
  detail::check_radii(g, radii);
  const int dim = g.dim();
  const double h = g.spacing();
  const double cell = g.cell_volume();
  const auto ball = ball_cells(g, x0, radii.back());
  std::vector<std::pair<double, double>> terms;
  for (std::size_t c : ball.cells) {
    const double t = distance(g.center(c), x0, dim);
    if (t < 0.5 * h) continue;
    const double gs = detail::cell_grad_sq(v, c);
    if (gs == 0.0) continue;
    terms.emplace_back(t, gs * std::pow(t, 2 - dim) * cell);
  }
  RadialProfile p{radii, {}, ProfileKind::acf};
  for (double r : radii) {
    double s = 0.0;
    for (const auto& [t, w] : terms)
      if (t < r) s += w;
    p.values.push_back(s / (r * r));
  }
  return p;
}

/// max over r1 < r2 of (P(r1) - P(r2))_+ / (1 + P(r1)).
inline double violation_score(const RadialProfile& p) {
  double worst = 0.0;
  for (std::size_t a = 0; a < p.values.size(); ++a)
    for (std::size_t b = a + 1; b < p.values.size(); ++b)
      worst = std::max(worst, std::max(0.0, p.values[a] - p.values[b]) / (1.0 + p.values[a]));
  return worst;
}

struct AcfProduct {
  RadialProfile profile;
  double violation = 0.0;
};

inline AcfProduct acf_product(const PhaseField& u, Phase p1, Phase p2, const Point& x0,
                              const std::vector<double>& radii) {
  if (p1.index == p2.index && p1.sign == p2.sign)
    throw PreconditionError("ACF product needs two distinct phases");
  const auto a = acf_profile(u, p1, x0, radii);
  const auto b = acf_profile(u, p2, x0, radii);
  AcfProduct out;
  out.profile = {radii, {}, ProfileKind::acf_product};
  for (std::size_t k = 0; k < radii.size(); ++k) out.profile.values.push_back(a.values[k] * b.values[k]);
  out.violation = violation_score(out.profile);
  return out;
}

/// Psi(r) = r^-n sum |grad v|^2 h^n + r^-n lambda |{v > 0} cap B|
///          - r^-1 sum |x - x0|^(1-n) (d_rho v)^2 h^n,   v = (u_i)_+.
/// d_rho v is the difference of interpolated values at x -+ (h/2) e_rho.
inline RadialProfile weiss_profile(const PhaseField& u, int i, double lambda, const Point& x0,
                                   const std::vector<double>& radii) {
  const ScalarField v = phase_part(u, {i, 1});
  const Grid& g = v.grid();
  detail::check_radii(g, radii);
  const int dim = g.dim();
  const double h = g.spacing();
  const double cell = g.cell_volume();
  const auto ball = ball_cells(g, x0, radii.back());
  struct Term {
    double t, grad, vol, radial;
  };
  std::vector<Term> terms;
  for (std::size_t c : ball.cells) {
    const Point x = g.center(c);
    const double t = distance(x, x0, dim);
    if (t < 0.5 * h) continue;
    Point e{};
    for (int d = 0; d < dim; ++d) e[d] = (x[d] - x0[d]) / t;
    const Point xp = detail::offset(x, e, 0.5 * h, dim), xm = detail::offset(x, e, -0.5 * h, dim);
    double dr = 0.0;
    if (g.in_bounding_box(xp) && g.in_bounding_box(xm)) dr = (sample(v, xp) - sample(v, xm)) / h;
    terms.push_back({t, detail::cell_grad_sq(v, c) * cell, v[c] > 0.0 ? cell : 0.0,
                     std::pow(t, 1 - dim) * dr * dr * cell});
  }
  RadialProfile p{radii, {}, ProfileKind::weiss};
  for (double r : radii) {
    double grad = 0.0, vol = 0.0, rad = 0.0;
    for (const auto& tm : terms)
      if (tm.t < r) {
        grad += tm.grad;
        vol += tm.vol;
        rad += tm.radial;
      }
    const double rn = std::pow(r, dim);
    p.values.push_back(grad / rn + lambda * vol / rn - rad / r);
  }
  return p;
}

struct DensityReport {
  double mean_square = 0.0;      // mean of v^2 over B, divided by r^2
  double positive_volume = 0.0;  // |{v > 0} cap B| / r^n
  double interior = 0.0;         // min of v / delta over positive cells with delta >= 2h
  double complement = 0.0;       // |{u_i <= 0} cap B| / r^n
};

/// Nondegeneracy ratios of phase i at a free-boundary point x0.
/// delta(y) is the distance from y to the nearest cell with v <= 0, less h/2.
inline DensityReport density_report(const PhaseField& u, int i, const Point& x0, double r) {
  const ScalarField v = phase_part(u, {i, 1});
  const Grid& g = v.grid();
  if (!detail::near_free_boundary(v, x0))
    throw PreconditionError("density_report: x0 is not on the free boundary of phase " +
                            std::to_string(i));
  const int dim = g.dim();
  const double h = g.spacing();
  const double cell = g.cell_volume();
  const auto ball = ball_cells(g, x0, r);
  DensityReport out;
  double sq = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t c : ball.cells) {
    sq += v[c] * v[c];
    (v[c] > 0.0 ? pos : neg) += 1;
  }
  const double rn = std::pow(r, dim);
  out.mean_square = sq / static_cast<double>(ball.cells.size()) / (r * r);
  out.positive_volume = static_cast<double>(pos) * cell / rn;
  out.complement = static_cast<double>(neg) * cell / rn;

  // Nearest nonpositive cells always touch a positive one.
  const auto wide = ball_cells(g, x0, 2.0 * r + 2.0 * h);
  std::vector<Point> front;
  for (std::size_t c : wide.cells) {
    if (v[c] > 0.0) continue;
    bool touches = false;
    g.for_each_neighbor(c, [&](std::size_t nb) { touches = touches || v[nb] > 0.0; });
    if (touches) front.push_back(g.center(c));
  }
  double best = std::numeric_limits<double>::infinity();
  double fallback = std::numeric_limits<double>::infinity();
  for (std::size_t c : ball.cells) {
    if (!(v[c] > 0.0)) continue;
    const Point x = g.center(c);
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& z : front) dist = std::min(dist, distance(x, z, dim));
    const double delta = dist - 0.5 * h;
    if (!(delta > 0.0) || !std::isfinite(delta)) continue;
    const double q = v[c] / delta;
    if (delta >= 2.0 * h) best = std::min(best, q);
    fallback = std::min(fallback, q);
  }
  out.interior = std::isfinite(best) ? best : (std::isfinite(fallback) ? fallback : 0.0);
  return out;
}

struct InterfaceMeasure {
  std::vector<double> radii;
  std::vector<double> mu;          // mu(B(x0, r))
  std::vector<double> mu_density;  // mu / r^(n-1)
  double h_density = 0.0;
  double h_radius = 0.0;
};

/// mu = Lap_h v - (f_i v - g_i / 2) 1_{v > 0}, v = (u_i)_+, summed over
/// B(x0, r) with weight h^n. h_density uses the smallest radius >= 4h.
inline InterfaceMeasure interface_measure(const PhaseField& u, const FunctionalSpec& spec, int i,
                                          const Point& x0, const std::vector<double>& radii) {
  const ScalarField v = phase_part(u, {i, 1});
  const Grid& g = v.grid();
  if (!detail::near_free_boundary(v, x0))
    throw PreconditionError("interface_measure: x0 is not on the free boundary of phase " +
                            std::to_string(i));
  detail::check_radii(g, radii);
  const int dim = g.dim();
  const double h = g.spacing();
  const double cell = g.cell_volume();
  const ScalarField lap = laplacian_apply(v);
  const auto& f = spec.f[static_cast<std::size_t>(i - 1)];
  const auto& gi = spec.g[static_cast<std::size_t>(i - 1)];
  const double omega = dim == 1 ? 1.0 : (dim == 2 ? 2.0 : std::numbers::pi);
  auto measure = [&](double r) {
    double s = 0.0;
    for (std::size_t c : ball_cells(g, x0, r).cells) {
      double d = lap[c];
      if (v[c] > 0.0) d -= f[c] * v[c] - 0.5 * gi[c];
      s += d * cell;
    }
    return s;
  };
  InterfaceMeasure out;
  out.radii = radii;
  for (double r : radii) {
    out.mu.push_back(measure(r));
    out.mu_density.push_back(out.mu.back() / std::pow(r, dim - 1));
  }
  out.h_radius = 4.0 * h;
  double mu_h = 0.0;
  auto it = std::find_if(radii.begin(), radii.end(), [&](double r) { return r >= 4.0 * h; });
  if (it != radii.end()) {
    out.h_radius = *it;
    mu_h = out.mu[static_cast<std::size_t>(it - radii.begin())];
  } else {
    mu_h = measure(out.h_radius);
  }
  out.h_density = mu_h / (omega * std::pow(out.h_radius, dim - 1));
  return out;
}

struct ElReport {
  bool two_phase = false;
  Phase phase1{};
  Phase phase2{};
  Point normal{};  // points into phase1
  double a1 = 0.0;
  double a2 = 0.0;
  std::vector<double> lambda;
  double target = 0.0;  // lambda difference, or Q^2
  double residual = 0.0;
};

namespace detail {

/// Phases with support in the ball, largest support first.
inline std::vector<std::pair<Phase, std::size_t>> phases_in_ball(
    const PhaseField& u, const std::vector<SignConstraint>& sign,
    const std::vector<std::size_t>& cells) {
  std::vector<std::pair<Phase, std::size_t>> out;
  for (int i = 1; i <= u.num_phases(); ++i)
    for (int s : {1, -1}) {
      if (s == -1 && sign[static_cast<std::size_t>(i - 1)] == SignConstraint::nonnegative) continue;
      std::size_t n = 0;
      for (std::size_t c : cells) n += s * u[i - 1][c] > 0.0 ? 1 : 0;
      if (n) out.push_back({{i, s}, n});
    }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

/// Least-squares slope of v against the normal coordinate over cells of a
/// tube around the line through the centroid: 2h <= t <= r/2, |tangential|
/// <= r/4.
inline double one_sided_slope(const ScalarField& v, const NormalFit& fit, double dir,
                              const std::vector<std::size_t>& cells, double r) {
  const Grid& g = v.grid();
  const int dim = g.dim();
  const double h = g.spacing();
  double st = 0.0, sv = 0.0, stt = 0.0, stv = 0.0;
  std::size_t n = 0;
  for (std::size_t c : cells) {
    const Point x = g.center(c);
    double t = 0.0, q = 0.0;
    for (int d = 0; d < dim; ++d) t += (x[d] - fit.centroid[d]) * fit.normal[d];
    t *= dir;
    for (int d = 0; d < dim; ++d) {
      const double off = x[d] - fit.centroid[d] - dir * t * fit.normal[d];
      q += off * off;
    }
    if (t < 2.0 * h || t > 0.5 * r || std::sqrt(q) > 0.25 * r) continue;
    st += t;
    sv += v[c];
    stt += t * t;
    stv += t * v[c];
    ++n;
  }
  if (n < 2) throw PreconditionError("too few cells for a one-sided slope fit");
  const double nn = static_cast<double>(n);
  const double den = nn * stt - st * st;
  if (!(den > 0.0)) throw PreconditionError("one-sided slope fit is degenerate");
  return (nn * stv - st * sv) / den;
}

}  // namespace detail

/// Slope laws at x0: a1^2 - a2^2 = lambda_i1 - lambda_i2 between two phases,
/// a1^2 = lambda_i1 - min(0, lambda_j, j != i1) against the black zone.
/// `lambda` defaults to volume_marginal(w) evaluated at x0.
inline ElReport el_interface_check(const PhaseField& u, const Partition& w,
                                   const FunctionalSpec& spec, const Point& x0, double r_fit,
                                   std::optional<std::vector<double>> lambda = std::nullopt) {
  const Grid& g = *spec.grid;
  const auto ball = ball_cells(g, x0, r_fit);
  const auto present = detail::phases_in_ball(u, spec.sign, ball.cells);
  if (present.empty()) throw PreconditionError("el_interface_check: no phase is supported in the ball");
  ElReport rep;
  rep.lambda = lambda ? *lambda : volume_marginal(w, spec.volume_term, x0).lambda;
  if (static_cast<int>(rep.lambda.size()) != spec.num_phases)
    throw PreconditionError("el_interface_check needs one lambda per phase");
  rep.phase1 = present[0].first;
  rep.two_phase = present.size() >= 2;
  const ScalarField v1 = phase_part(u, rep.phase1);
  ScalarField level = v1;
  ScalarField v2(spec.grid);
  if (rep.two_phase) {
    rep.phase2 = present[1].first;
    v2 = phase_part(u, rep.phase2);
    level = axpby(1.0, v1, -1.0, v2);
  } else if (present[0].second == ball.cells.size()) {
    throw PreconditionError("el_interface_check: no free boundary in the ball");
  }
  auto pts = detail::boundary_points(v1, level, ball.cells);
  auto fit = detail::fit_normal(pts.points, g.dim());
  detail::orient(fit, g, detail::positive_cells(v1, ball.cells));
  rep.normal = fit.normal;
  rep.a1 = detail::one_sided_slope(v1, fit, 1.0, ball.cells, r_fit);
  const double l1 = rep.lambda[static_cast<std::size_t>(rep.phase1.index - 1)];
  if (rep.two_phase) {
    rep.a2 = detail::one_sided_slope(v2, fit, -1.0, ball.cells, r_fit);
    rep.target = l1 - rep.lambda[static_cast<std::size_t>(rep.phase2.index - 1)];
    rep.residual = std::abs(rep.a1 * rep.a1 - rep.a2 * rep.a2 - rep.target);
  } else {
    double m = 0.0;
    for (int j = 1; j <= spec.num_phases; ++j)
      if (j != rep.phase1.index) m = std::min(m, rep.lambda[static_cast<std::size_t>(j - 1)]);
    rep.target = l1 - m;
    rep.residual = std::abs(rep.a1 * rep.a1 - rep.target);
  }
  return rep;
}

struct FlatnessProfile {
  RadialProfile beta;
  std::vector<Point> normals;
};

/// beta(r): least band half-width over r, around the hyperplane through x0
/// with the fitted normal, outside of which phase1 fills the upper side and
/// phase2 (or the zero set, without phase2) the lower side, and which holds
/// every free-boundary point of the ball.
inline FlatnessProfile flatness(const PhaseField& u, Phase p1, std::optional<Phase> p2,
                                const Point& x0, const std::vector<double>& radii) {
  const ScalarField v1 = phase_part(u, p1);
  const Grid& g = v1.grid();
  detail::check_radii(g, radii);
  const int dim = g.dim();
  ScalarField v2(v1.grid_ptr());
  ScalarField level = v1;
  if (p2) {
    v2 = phase_part(u, *p2);
    level = axpby(1.0, v1, -1.0, v2);
  }
  FlatnessProfile out;
  out.beta = {radii, {}, ProfileKind::flatness};
  for (double r : radii) {
    const auto ball = ball_cells(g, x0, r);
    auto pts = detail::boundary_points(v1, level, ball.cells);
    auto fit = detail::fit_normal(pts.points, dim);
    detail::orient(fit, g, detail::positive_cells(v1, ball.cells));
    auto height = [&](const Point& x) {
      double t = 0.0;
      for (int d = 0; d < dim; ++d) t += (x[d] - x0[d]) * fit.normal[d];
      return t;
    };
    double band = 0.0;
    for (const auto& p : pts.points) band = std::max(band, std::abs(height(p)));
    for (std::size_t c : ball.cells) {
      const double t = height(g.center(c));
      const bool upper_ok = v1[c] > 0.0;
      const bool lower_ok = p2 ? v2[c] > 0.0 : !(v1[c] > 0.0);
      if (t > 0.0 && !upper_ok) band = std::max(band, t);
      if (t < 0.0 && !lower_ok) band = std::max(band, -t);
    }
    out.beta.values.push_back(std::min(1.0, band / r));
    out.normals.push_back(fit.normal);
  }
  return out;
}

/// x -> u(x0 + rk x) / rk on the same lattice shifted by -x0, full mask.
inline PhaseField blowup_rescale(const PhaseField& u, const Point& x0, double rk) {
  const Grid& g = u.grid();
  if (!(rk >= 4.0 * g.spacing())) throw PreconditionError("blow-up scale must be at least 4h");
  const int dim = g.dim();
  Point origin = g.origin();
  for (int d = 0; d < dim; ++d) origin[d] -= x0[d];
  const auto out_grid = make_grid(Grid(dim, g.shape_vector(), g.spacing(), origin,
                                       std::vector<std::uint8_t>(g.size(), 1)));
  std::vector<Point> src(g.size());
  for (std::size_t c = 0; c < g.size(); ++c) {
    const Point z = out_grid->center(c);
    Point x{};
    for (int d = 0; d < dim; ++d) x[d] = x0[d] + rk * z[d];
    if (!g.in_bounding_box(x, 1e-12 * g.spacing()))
      throw PreconditionError("blow-up window leaves the bounding box");
    for (int d = 0; d < dim; ++d)
      x[d] = std::clamp(x[d], g.lower()[d], g.upper()[d]);
    src[c] = x;
  }
  PhaseField out;
  for (const auto& ui : u.u) {
    std::vector<double> vals(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) vals[c] = sample(ui, src[c]) / rk;
    out.u.emplace_back(out_grid, std::move(vals));
  }
  return out;
}

/// Phases whose support meets B(x0, r) while x0 is within 2h of their free
/// boundary (midpoints of in-mask edges between v > 0 and v <= 0).
inline int phase_count_at(const PhaseField& u, const std::vector<SignConstraint>& sign,
                          const Point& x0, double r) {
  const Grid& g = u.grid();
  const double h = g.spacing();
  if (!(r >= 4.0 * h - 1e-12 * h)) throw PreconditionError("phase_count_at needs r >= 4h");
  const int dim = g.dim();
  const auto near = ball_cells(g, x0, 3.0 * h);
  const auto ball = ball_cells(g, x0, r);
  int count = 0;
  for (int i = 1; i <= u.num_phases(); ++i)
    for (int s : {1, -1}) {
      if (s == -1 && sign[static_cast<std::size_t>(i - 1)] == SignConstraint::nonnegative) continue;
      const ScalarField& ui = u[i - 1];
      bool meets = false;
      for (std::size_t c : ball.cells) meets = meets || s * ui[c] > 0.0;
      if (!meets) continue;
      bool on_boundary = false;
      for (std::size_t c : near.cells) {
        if (on_boundary || !g.in_mask(c)) continue;
        const Index idx = g.unflatten(c);
        for (int d = 0; d < dim && !on_boundary; ++d) {
          for (int step : {-1, 1}) {
            Index j = idx;
            j[d] += step;
            if (!g.contains_index(j)) continue;
            const std::size_t b = g.flatten(j);
            if (!g.in_mask(b)) continue;
            if ((s * ui[c] > 0.0) == (s * ui[b] > 0.0)) continue;
            Point m = g.center(c);
            m[d] += 0.5 * step * h;
            if (distance(m, x0, dim) <= 2.0 * h) on_boundary = true;
          }
        }
      }
      if (on_boundary) ++count;
    }
  return count;
}

/// Largest |difference quotient| over edges with both ends in the bounding
/// box (and in `region`, when given).
inline double lipschitz_estimate(const ScalarField& u, std::span<const std::uint8_t> region = {}) {
  const Grid& g = u.grid();
  const double inv_h = 1.0 / g.spacing();
  double m = 0.0;
  g.for_each_edge([&](std::size_t a, std::size_t b, int) {
    if (b == Grid::kGhost) return;
    if (!region.empty() && (!region[a] || !region[b])) return;
    m = std::max(m, std::abs(u[b] - u[a]) * inv_h);
  });
  return m;
}

inline double lipschitz_estimate(const PhaseField& u, std::span<const std::uint8_t> region = {}) {
  double m = 0.0;
  for (const auto& ui : u.u) m = std::max(m, lipschitz_estimate(ui, region));
  return m;
}

/// Zero crossings of v1 - v2 on in-mask edges joining a cell where phase p1
/// is positive to a cell where p2 is positive.
inline std::vector<Point> interface_points(const PhaseField& u, Phase p1, Phase p2) {
  const ScalarField v1 = phase_part(u, p1), v2 = phase_part(u, p2);
  const Grid& g = v1.grid();
  const int dim = g.dim();
  std::vector<Point> out;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    const Index idx = g.unflatten(c);
    for (int d = 0; d < dim; ++d) {
      if (idx[d] + 1 >= g.extent(d)) continue;
      const std::size_t b = c + static_cast<std::size_t>(g.stride(d));
      if (!g.in_mask(b)) continue;
      const bool forward = v1[c] > 0.0 && v2[b] > 0.0;
      const bool backward = v2[c] > 0.0 && v1[b] > 0.0;
      if (!forward && !backward) continue;
      const double la = v1[c] - v2[c], lb = v1[b] - v2[b];
      const double t = la / (la - lb);
      Point x = g.center(c);
      x[d] += t * g.spacing();
      out.push_back(x);
    }
  }
  return out;
}

/// Midpoints of in-mask edges joining a cell where phase p is positive to a
/// cell where every component vanishes.
inline std::vector<Point> free_boundary_points(const PhaseField& u, Phase p) {
  const ScalarField v = phase_part(u, p);
  const Grid& g = v.grid();
  const int dim = g.dim();
  auto empty = [&](std::size_t c) {
    for (const auto& ui : u.u)
      if (ui[c] != 0.0) return false;
    return true;
  };
  std::vector<Point> out;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    const Index idx = g.unflatten(c);
    for (int d = 0; d < dim; ++d) {
      if (idx[d] + 1 >= g.extent(d)) continue;
      const std::size_t b = c + static_cast<std::size_t>(g.stride(d));
      if (!g.in_mask(b)) continue;
      if ((v[c] > 0.0 && empty(b)) || (v[b] > 0.0 && empty(c))) {
        Point x = g.center(c);
        x[d] += 0.5 * g.spacing();
        out.push_back(x);
      }
    }
  }
  return out;
}

/// The entry of `pts` closest to x (first one on ties).
inline Point nearest_point(const std::vector<Point>& pts, const Point& x, int dim) {
  if (pts.empty()) throw PreconditionError("no candidate points");
  std::size_t best = 0;
  for (std::size_t k = 1; k < pts.size(); ++k)
    if (distance(pts[k], x, dim) < distance(pts[best], x, dim)) best = k;
  return pts[best];
}

/// r,value
inline void write_profile_csv(std::ostream& os, const RadialProfile& p) {
  os << "r,value\n";
  for (std::size_t k = 0; k < p.radii.size(); ++k)
    os << format_double(p.radii[k]) << ',' << format_double(p.values[k]) << '\n';
}

}  // namespace mfb
