#pragma once

// Linear solves for the phase equation  -Lap u_i + f_i u_i = g_i / 2  on a
// fixed region, and the landscape equation  -Lap w0 + V w0 = 1  on the mask.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfb/functional.hpp"
#include "mfb/grid.hpp"

namespace mfb {

struct SolveStats {
  int iterations = 0;
  double residual = 0.0;  // ||b - A x||_2 / ||b||_2
  int active_set_rounds = 0;
};

namespace detail {

/// Matrix-free (-Lap_h + reaction) restricted to an active cell list, with
/// homogeneous Dirichlet data on every other cell.
class DirichletOperator {
 public:
  DirichletOperator(const Grid& g, std::span<const std::uint8_t> active,
                    std::span<const double> reaction)
      : size_(g.size()) {
    const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
    const int nn = 2 * g.dim();
    nn_ = nn;
    slot_.assign(g.size(), -1);
    for (std::size_t c = 0; c < g.size(); ++c)
      if (active[c]) {
        slot_[c] = static_cast<std::ptrdiff_t>(cells_.size());
        cells_.push_back(c);
      }
    neighbors_.assign(cells_.size() * static_cast<std::size_t>(nn), -1);
    diag_.resize(cells_.size());
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      const std::size_t c = cells_[k];
      int j = 0;
      g.for_each_neighbor(c, [&](std::size_t nb) {
        neighbors_[k * static_cast<std::size_t>(nn) + static_cast<std::size_t>(j++)] = slot_[nb];
      });
      diag_[k] = nn * inv_h2 + reaction[c];
    }
    inv_h2_ = inv_h2;
  }

  std::size_t unknowns() const noexcept { return cells_.size(); }
  std::size_t cell(std::size_t k) const noexcept { return cells_[k]; }
  double diag(std::size_t k) const noexcept { return diag_[k]; }

  void apply(std::span<const double> x, std::span<double> y) const noexcept {
    const auto nn = static_cast<std::size_t>(nn_);
    for (std::size_t k = 0; k < cells_.size(); ++k) {
      double off = 0.0;
      for (std::size_t j = 0; j < nn; ++j) {
        const std::ptrdiff_t s = neighbors_[k * nn + j];
        if (s >= 0) off += x[static_cast<std::size_t>(s)];
      }
      y[k] = diag_[k] * x[k] - inv_h2_ * off;
    }
  }

 private:
  std::size_t size_;
  int nn_ = 0;
  double inv_h2_ = 0.0;
  std::vector<std::size_t> cells_;
  std::vector<std::ptrdiff_t> slot_;
  std::vector<std::ptrdiff_t> neighbors_;
  std::vector<double> diag_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace detail

/// Jacobi-preconditioned conjugate gradients for (-Lap_h + reaction) x = rhs
/// on `active`, x = 0 elsewhere. `warm`, when given, seeds the iteration on
/// the active cells. Throws SolverError after 50 * sqrt(#unknowns) steps.
inline ScalarField solve_dirichlet(const GridPtr& grid, std::span<const std::uint8_t> active,
                                   std::span<const double> reaction, std::span<const double> rhs,
                                   double tol, const ScalarField* warm = nullptr,
                                   SolveStats* stats = nullptr) {
  if (!(tol > 0.0)) throw PreconditionError("solver tolerance must be positive");
  const detail::DirichletOperator op(*grid, active, reaction);
  const std::size_t n = op.unknowns();
  ScalarField out(grid);
  if (stats) *stats = {};
  if (n == 0) return out;

  std::vector<double> b(n), x(n, 0.0), r(n), z(n), p(n), q(n);
  for (std::size_t k = 0; k < n; ++k) b[k] = rhs[op.cell(k)];
  const double bnorm = std::sqrt(detail::dot(b, b));
  if (bnorm == 0.0) return out;
  if (warm)
    for (std::size_t k = 0; k < n; ++k) x[k] = (*warm)[op.cell(k)];

  op.apply(x, q);
  for (std::size_t k = 0; k < n; ++k) r[k] = b[k] - q[k];
  double rnorm = std::sqrt(detail::dot(r, r));
  const int cap = std::max(50, static_cast<int>(50.0 * std::sqrt(static_cast<double>(n))));
  int it = 0;
  if (rnorm > tol * bnorm) {
    for (std::size_t k = 0; k < n; ++k) z[k] = r[k] / op.diag(k);
    p = z;
    double rz = detail::dot(r, z);
    for (it = 1; it <= cap; ++it) {
      op.apply(p, q);
      const double alpha = rz / detail::dot(p, q);
      for (std::size_t k = 0; k < n; ++k) {
        x[k] += alpha * p[k];
        r[k] -= alpha * q[k];
      }
      rnorm = std::sqrt(detail::dot(r, r));
      if (rnorm <= tol * bnorm) break;
      for (std::size_t k = 0; k < n; ++k) z[k] = r[k] / op.diag(k);
      const double rz_new = detail::dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
    }
    if (it > cap)
      throw SolverError("conjugate gradients did not converge: relative residual " +
                            std::to_string(rnorm / bnorm),
                        rnorm / bnorm, cap);
  }
  for (std::size_t k = 0; k < n; ++k) out[op.cell(k)] = x[k];
  if (stats) {
    stats->iterations = it;
    stats->residual = rnorm / bnorm;
  }
  return out;
}

/// u_i on W_i (label `phase`, 1-based) from  -Lap u + f_i u = g_i / 2,
/// u = 0 on every other cell. Nonnegative phases go through active-set
/// truncation: negative cells are frozen at 0 and the system re-solved, at
/// most 10 rounds, then the result is clamped.
inline ScalarField solve_phase(const FunctionalSpec& spec, const Partition& w, int phase,
                               double tol, const ScalarField* warm = nullptr,
                               SolveStats* stats = nullptr) {
  if (phase < 1 || phase > spec.num_phases) throw PreconditionError("phase index out of range");
  const auto i = static_cast<std::size_t>(phase - 1);
  std::vector<std::uint8_t> active = w.region(phase);
  std::vector<double> rhs(spec.grid->size());
  for (std::size_t c = 0; c < rhs.size(); ++c) rhs[c] = 0.5 * spec.g[i][c];
  const auto reaction = spec.f[i].values();

  SolveStats local;
  ScalarField u = solve_dirichlet(spec.grid, active, reaction, rhs, tol, warm, &local);
  int rounds = 0;
  if (spec.sign[i] == SignConstraint::nonnegative) {
    for (; rounds < 10; ++rounds) {
      bool frozen = false;
      for (std::size_t c = 0; c < u.size(); ++c)
        if (active[c] && u[c] < 0.0) {
          active[c] = 0;
          frozen = true;
        }
      if (!frozen) break;
      u = solve_dirichlet(spec.grid, active, reaction, rhs, tol, &u, &local);
    }
    for (std::size_t c = 0; c < u.size(); ++c) u[c] = std::max(0.0, u[c]);
  }
  local.active_set_rounds = rounds;
  if (stats) *stats = local;
  return u;
}

/// Landscape function: -Lap w0 + V w0 = 1 on the mask, 0 outside.
inline ScalarField solve_landscape(const GridPtr& grid, const ScalarField& potential, double tol,
                                   SolveStats* stats = nullptr) {
  if (potential.min_value() < 0.0) throw PreconditionError("potential must be >= 0");
  std::vector<double> rhs(grid->size(), 0.0);
  for (std::size_t c = 0; c < rhs.size(); ++c) rhs[c] = grid->in_mask(c) ? 1.0 : 0.0;
  return solve_dirichlet(grid, grid->mask(), potential.values(), rhs, tol, nullptr, stats);
}

}  // namespace mfb
