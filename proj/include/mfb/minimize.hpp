#pragma once

// Block-coordinate descent on J(u, W): exact field solves for a fixed
// partition alternate with cellwise relabeling of the partition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "mfb/elliptic.hpp"
#include "mfb/functional.hpp"

namespace mfb {

struct SolveReport {
  int iterations = 0;
  std::vector<double> j_history;
  std::vector<std::vector<double>> volume_history;
  bool converged = false;
  std::vector<double> final_volumes;
  double zero_set_fraction = 0.0;
  int rejected_batches = 0;
};

struct MinimizeOptions {
  int max_outer = 400;
  double tol_j = 1e-9;
  double tol_solve = 1e-10;
  int workers = 1;
  int max_backtracks = 16;
};

struct MinimizeResult {
  PhaseField u;
  Partition w;
  SolveReport report;
};

/// Replaces every u_i by solve_phase on W_i; the old u seeds the solves.
inline PhaseField update_fields(const FunctionalSpec& spec, const Partition& w,
                                const PhaseField* warm, double tol, int workers = 1) {
  PhaseField out = PhaseField::zeros(spec.grid, spec.num_phases);
  auto solve_one = [&](int i) {
    const ScalarField* seed = warm ? &(*warm)[i] : nullptr;
    out[i] = solve_phase(spec, w, i + 1, tol, seed);
  };
  if (workers <= 1 || spec.num_phases == 1) {
    for (int i = 0; i < spec.num_phases; ++i) solve_one(i);
    return out;
  }
  // Phases are independent; each worker owns disjoint outputs.
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(spec.num_phases));
  int next = 0;
  while (next < spec.num_phases) {
    std::vector<std::jthread> pool;
    for (int k = 0; k < workers && next < spec.num_phases; ++k, ++next) {
      pool.emplace_back([&, i = next] {
        try {
          solve_one(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline PhaseField update_fields(const FunctionalSpec& spec, const Partition& w,
                                const PhaseField& u, double tol, int workers = 1) {
  return update_fields(spec, w, &u, tol, workers);
}

namespace detail {

/// Marginal volume cost of phase `label` at cell c, with PowerLaw marginals
/// frozen at the volumes entering the sweep.
inline double cell_lambda(const FunctionalSpec& spec, const std::vector<double>& frozen,
                          int label, std::size_t c) {
  if (std::holds_alternative<PowerLaw>(spec.volume_term))
    return frozen[static_cast<std::size_t>(label - 1)];
  return std::get<PerRegion>(spec.volume_term).q[static_cast<std::size_t>(label - 1)][c];
}

inline std::vector<double> frozen_lambdas(const FunctionalSpec& spec, const Partition& w) {
  if (std::holds_alternative<PowerLaw>(spec.volume_term))
    return volume_marginal(w, spec.volume_term).lambda;
  return {};
}

}  // namespace detail

/// Cellwise reassignment. Candidate i costs (-v_i g_i + u_i^2 f_i + lambda_i) h^n
/// where v_i is u_i truncated to its sign constraint; the black zone costs 0.
/// Ties go to the lowest label. Fields are not touched; cells that leave W_i
/// are zeroed by the next update_fields.
inline Partition update_partition(const FunctionalSpec& spec, const PhaseField& u,
                                  const Partition& w) {
  const Grid& g = *spec.grid;
  const double cell = g.cell_volume();
  const auto lambdas = detail::frozen_lambdas(spec, w);
  Partition out(spec.grid, spec.num_phases);
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    int best = 0;
    double best_cost = 0.0;
    for (int i = 1; i <= spec.num_phases; ++i) {
      const auto k = static_cast<std::size_t>(i - 1);
      const double ui = u[i - 1][c];
      const double vi = spec.sign[k] == SignConstraint::nonnegative ? std::max(0.0, ui) : ui;
      const double cost =
          (-vi * spec.g[k][c] + ui * ui * spec.f[k][c] + detail::cell_lambda(spec, lambdas, i, c)) *
          cell;
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    out[c] = best;
  }
  return out;
}

/// Default initial partition: nearest seed (ties to the lowest label), or
/// equal stripes along axis 0 when no seeds are given.
inline Partition initial_partition(const FunctionalSpec& spec, const std::vector<Point>& seeds) {
  const Grid& g = *spec.grid;
  Partition w(spec.grid, spec.num_phases);
  if (!seeds.empty() && static_cast<int>(seeds.size()) != spec.num_phases)
    throw PreconditionError("need exactly one seed point per phase");
  const double lo = g.lower()[0], hi = g.upper()[0];
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    const Point x = g.center(c);
    if (seeds.empty()) {
      const double t = (x[0] - lo) / (hi - lo);
      w[c] = std::clamp(static_cast<int>(t * spec.num_phases) + 1, 1, spec.num_phases);
      continue;
    }
    int best = 1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const double d = distance(x, seeds[s], g.dim());
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(s) + 1;
      }
    }
    w[c] = best;
  }
  return w;
}

inline double zero_set_fraction(const PhaseField& u) {
  const Grid& g = u.grid();
  std::size_t zero = 0, total = 0;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    ++total;
    bool all_zero = true;
    for (const auto& ui : u.u) all_zero = all_zero && ui[c] == 0.0;
    if (all_zero) ++zero;
  }
  return total ? static_cast<double>(zero) / static_cast<double>(total) : 0.0;
}

struct CellMove {
  std::size_t cell = 0;
  int to = 0;
  double estimate = 0.0;  // upper bound on the change of J from this move alone
};

namespace detail {

/// Diagonal entry at c of the inverse of (-Lap_h + f) restricted to `in_set`
/// cells of a window of half-width `half` around c (Dirichlet outside). The
/// window value never exceeds the full-domain value.
template <class InSet>
double local_green_diagonal(const Grid& g, const ScalarField& reaction, std::size_t c,
                            std::ptrdiff_t half, InSet&& in_set) {
  const Index center = g.unflatten(c);
  std::vector<std::size_t> cells;
  std::vector<std::ptrdiff_t> slot_of;
  Index lo{}, hi{};
  std::array<std::ptrdiff_t, kMaxDim> ext{};
  std::ptrdiff_t total = 1;
  for (int d = 0; d < g.dim(); ++d) {
    lo[d] = std::max<std::ptrdiff_t>(0, center[d] - half);
    hi[d] = std::min<std::ptrdiff_t>(g.extent(d) - 1, center[d] + half);
    ext[d] = hi[d] - lo[d] + 1;
    total *= ext[d];
  }
  slot_of.assign(static_cast<std::size_t>(total), -1);
  auto local = [&](const Index& idx) {
    std::ptrdiff_t s = 0;
    for (int d = 0; d < g.dim(); ++d) s = s * ext[d] + (idx[d] - lo[d]);
    return static_cast<std::size_t>(s);
  };
  Index idx = lo;
  while (true) {
    const std::size_t cc = g.flatten(idx);
    if (in_set(cc)) {
      slot_of[local(idx)] = static_cast<std::ptrdiff_t>(cells.size());
      cells.push_back(cc);
    }
    int d = g.dim() - 1;
    while (d >= 0) {
      if (++idx[d] <= hi[d]) break;
      idx[d] = lo[d];
      --d;
    }
    if (d < 0) break;
  }
  const std::size_t n = cells.size();
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  const auto nn = static_cast<std::size_t>(2 * g.dim());
  std::vector<std::ptrdiff_t> nbr(n * nn, -1);
  std::vector<double> diag(n);
  std::size_t target = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Index ik = g.unflatten(cells[k]);
    if (cells[k] == c) target = k;
    std::size_t j = 0;
    for (int d = 0; d < g.dim(); ++d)
      for (int s : {-1, 1}) {
        Index jn = ik;
        jn[d] += s;
        if (jn[d] >= lo[d] && jn[d] <= hi[d]) nbr[k * nn + j] = slot_of[local(jn)];
        ++j;
      }
    diag[k] = static_cast<double>(nn) * inv_h2 + reaction[cells[k]];
  }
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t k = 0; k < n; ++k) {
      double off = 0.0;
      for (std::size_t j = 0; j < nn; ++j)
        if (nbr[k * nn + j] >= 0) off += x[static_cast<std::size_t>(nbr[k * nn + j])];
      y[k] = diag[k] * x[k] - inv_h2 * off;
    }
  };
  std::vector<double> x(n, 0.0), r(n, 0.0), z(n), p(n), q(n);
  r[target] = 1.0;
  for (std::size_t k = 0; k < n; ++k) z[k] = r[k] / diag[k];
  p = z;
  double rz = detail::dot(r, z);
  for (std::size_t it = 0; it < 4 * n + 20; ++it) {
    apply(p, q);
    const double alpha = rz / detail::dot(p, q);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] += alpha * p[k];
      r[k] -= alpha * q[k];
    }
    if (std::sqrt(detail::dot(r, r)) < 1e-13) break;
    for (std::size_t k = 0; k < n; ++k) z[k] = r[k] / diag[k];
    const double rz_new = detail::dot(r, z);
    for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + (rz_new / rz) * p[k];
    rz = rz_new;
  }
  return x[target];
}

inline std::ptrdiff_t green_window(int dim) { return dim == 1 ? 64 : (dim == 2 ? 6 : 3); }

}  // namespace detail

/// Estimated change of J when cell c moves from its label to `to`, with the
/// fields re-solved. Removal from W_l costs h^n u_c^2 / G_cc, insertion into
/// W_m gains h^n r_c^2 G'_cc with r_c the residual of the phase equation at
/// c, and F changes exactly. Windowed Green's functions make this an upper
/// bound on the true change.
inline double move_estimate(const FunctionalSpec& spec, const PhaseField& u, const Partition& w,
                            const std::vector<double>& volumes, std::size_t c, int to) {
  const Grid& g = *spec.grid;
  const int from = w[c];
  if (from == to) return 0.0;
  const double cell = g.cell_volume();
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  const auto half = detail::green_window(g.dim());
  double est = 0.0;
  if (from > 0) {
    const double uc = u[from - 1][c];
    if (uc != 0.0) {
      const double gcc = detail::local_green_diagonal(
          g, spec.f[static_cast<std::size_t>(from - 1)], c, half,
          [&](std::size_t k) { return w[k] == from; });
      est += cell * uc * uc / gcc;
    }
  }
  if (to > 0) {
    const auto k = static_cast<std::size_t>(to - 1);
    double r = 0.5 * spec.g[k][c];
    g.for_each_neighbor(c, [&](std::size_t nb) { r += inv_h2 * u[to - 1][nb]; });
    if (!(spec.sign[k] == SignConstraint::nonnegative && r <= 0.0)) {
      const double gcc = detail::local_green_diagonal(
          g, spec.f[k], c, half, [&](std::size_t j) { return j == c || w[j] == to; });
      est -= cell * r * r * gcc;
    }
  }
  if (const auto* p = std::get_if<PowerLaw>(&spec.volume_term)) {
    std::vector<double> after = volumes;
    if (from > 0) after[static_cast<std::size_t>(from - 1)] -= cell;
    if (to > 0) after[static_cast<std::size_t>(to - 1)] += cell;
    est += power_law_value(*p, after) - power_law_value(*p, volumes);
  } else {
    const auto& q = std::get<PerRegion>(spec.volume_term).q;
    if (to > 0) est += q[static_cast<std::size_t>(to - 1)][c] * cell;
    if (from > 0) est -= q[static_cast<std::size_t>(from - 1)][c] * cell;
  }
  return est;
}

/// Candidate single-cell moves with a negative estimate, most profitable
/// first. Cells are considered when update_partition relabels them or when
/// they touch a differently labeled cell of the domain; targets are the
/// black zone, the neighboring labels and the label update_partition picks.
inline std::vector<CellMove> candidate_moves(const FunctionalSpec& spec, const PhaseField& u,
                                             const Partition& w, double threshold) {
  const Grid& g = *spec.grid;
  const Partition rule = update_partition(spec, u, w);
  const auto volumes = w.volumes();
  std::vector<CellMove> moves;
  std::vector<int> targets;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    targets.clear();
    if (rule[c] != w[c]) targets.push_back(rule[c]);
    g.for_each_neighbor(c, [&](std::size_t nb) {
      if (g.in_mask(nb) && w[nb] != w[c]) targets.push_back(w[nb]);
    });
    if (targets.empty()) continue;
    if (w[c] != 0) targets.push_back(0);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    CellMove best{c, w[c], threshold};
    for (int to : targets) {
      if (to == w[c]) continue;
      const double est = move_estimate(spec, u, w, volumes, c, to);
      if (est < best.estimate) best = {c, to, est};
    }
    if (best.to != w[c]) moves.push_back(best);
  }
  std::stable_sort(moves.begin(), moves.end(),
                   [](const CellMove& a, const CellMove& b) { return a.estimate < b.estimate; });
  return moves;
}

/// Alternating minimization. Each outer step proposes a batch of relabels,
/// re-solves the fields on the new partition and keeps the batch only when
/// J decreases; rejected batches are halved (best moves kept) and retried.
inline MinimizeResult minimize(const FunctionalSpec& spec, std::optional<Partition> init,
                               const MinimizeOptions& opts = {},
                               const std::vector<Point>& seeds = {}) {
  spec.validate();
  if (opts.max_outer < 1 || !(opts.tol_j > 0.0) || !(opts.tol_solve > 0.0))
    throw PreconditionError("minimize options must be positive");
  const Grid& g = *spec.grid;
  MinimizeResult res;
  res.w = init ? *init : initial_partition(spec, seeds);
  res.w.validate();
  res.u = update_fields(spec, res.w, nullptr, opts.tol_solve, opts.workers);
  double j = total(res.u, res.w, spec);
  res.report.j_history.push_back(j);
  res.report.volume_history.push_back(res.w.volumes());

  for (int it = 1; it <= opts.max_outer; ++it) {
    res.report.iterations = it;
    const double scale = 1.0 + std::abs(j);
    const auto moves = candidate_moves(spec, res.u, res.w, -opts.tol_j * scale);
    if (moves.empty()) {
      res.report.converged = true;
      break;
    }
    // Largest batch of pairwise non-adjacent cells, best estimates first.
    std::vector<std::uint8_t> taken(g.size(), 0);
    std::vector<CellMove> batch;
    for (const auto& m : moves) {
      bool clash = taken[m.cell] != 0;
      g.for_each_neighbor(m.cell, [&](std::size_t nb) { clash = clash || taken[nb] != 0; });
      if (clash) continue;
      taken[m.cell] = 1;
      batch.push_back(m);
    }
    bool accepted = false;
    std::size_t keep = batch.size();
    for (int attempt = 0; attempt <= opts.max_backtracks && keep > 0; ++attempt) {
      Partition trial = res.w;
      for (std::size_t k = 0; k < keep; ++k) trial[batch[k].cell] = batch[k].to;
      PhaseField u_trial = update_fields(spec, trial, &res.u, opts.tol_solve, opts.workers);
      const double j_trial = total(u_trial, trial, spec);
      if (j_trial < j - 1e-13 * scale) {
        const double drop = j - j_trial;
        res.w = std::move(trial);
        res.u = std::move(u_trial);
        j = j_trial;
        res.report.j_history.push_back(j);
        res.report.volume_history.push_back(res.w.volumes());
        accepted = true;
        if (drop < opts.tol_j * scale) res.report.converged = true;
        break;
      }
      ++res.report.rejected_batches;
      keep /= 2;
    }
    if (!accepted || res.report.converged) {
      res.report.converged = true;
      break;
    }
  }
  res.report.final_volumes = res.w.volumes();
  res.report.zero_set_fraction = zero_set_fraction(res.u);
  return res;
}

/// iteration,J,vol_1,...,vol_N
inline void write_solve_report_csv(std::ostream& os, const SolveReport& rep) {
  os << "iteration,J";
  const std::size_t n = rep.volume_history.empty() ? 0 : rep.volume_history.front().size();
  for (std::size_t i = 0; i < n; ++i) os << ",volume_" << (i + 1);
  os << '\n';
  for (std::size_t k = 0; k < rep.j_history.size(); ++k) {
    os << k << ',' << format_double(rep.j_history[k]);
    for (double v : rep.volume_history[k]) os << ',' << format_double(v);
    os << '\n';
  }
}

}  // namespace mfb
