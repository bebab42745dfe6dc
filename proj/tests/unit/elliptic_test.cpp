#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "mfb/elliptic.hpp"
#include "mfb/oracle.hpp"

using namespace mfb;

namespace {

Partition full(const GridPtr& g, int n, int label) {
  Partition w(g, n);
  for (std::size_t c = 0; c < w.size(); ++c)
    if (g->in_mask(c)) w[c] = label;
  return w;
}

double max_error(const ScalarField& u, const std::function<double(double)>& exact) {
  double e = 0.0;
  for (std::size_t c = 0; c < u.size(); ++c)
    if (u.grid().in_mask(c)) e = std::max(e, std::abs(u[c] - exact(u.grid().center(c)[0])));
  return e;
}

}  // namespace

TEST(SolvePhase, ZeroSourceGivesZero) {
  const auto g = make_grid(Grid::box(2, 16));
  const auto spec = FunctionalSpec::uniform(g, 1, 1.0, 0.0);
  EXPECT_EQ(solve_phase(spec, full(g, 1, 1), 1, 1e-10).max_abs(), 0.0);
}

TEST(SolvePhase, OneDimensionalParabola) {
  const auto g = make_grid(Grid::box(1, 128));
  const auto u = solve_phase(FunctionalSpec::uniform(g, 1, 0.0, 2.0), full(g, 1, 1), 1, 1e-12);
  EXPECT_NEAR(u.max_value(), 0.125, 1e-4);
  EXPECT_NEAR(u[64], 0.125, 1e-4);
}

TEST(SolvePhase, UnitSquareTorsion) {
  const auto g = make_grid(Grid::box(2, 128));
  const auto u = solve_phase(FunctionalSpec::uniform(g, 1, 0.0, 2.0), full(g, 1, 1), 1, 1e-10);
  EXPECT_NEAR(u.max_value(), 0.073671, 1e-3);
}

TEST(SolvePhase, OtherLabelsAreDirichletZero) {
  const auto g = make_grid(Grid::box(2, 16));
  Partition w(g, 2);
  for (std::size_t c = 0; c < w.size(); ++c)
    if (g->in_mask(c)) w[c] = g->center(c)[0] < 0.5 ? 1 : 2;
  const auto u = solve_phase(FunctionalSpec::uniform(g, 2, 0.0, 2.0), w, 1, 1e-12);
  for (std::size_t c = 0; c < u.size(); ++c) {
    if (w[c] != 1) EXPECT_EQ(u[c], 0.0);
    if (w[c] == 1) EXPECT_GT(u[c], 0.0);
  }
}

TEST(SolvePhase, SignConstraintTruncates) {
  const auto g = make_grid(Grid::box(1, 64));
  auto spec = FunctionalSpec::uniform(g, 1, 0.0, 0.0);
  spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return std::sin(2.0 * std::numbers::pi * x[0]); });
  const auto u = solve_phase(spec, full(g, 1, 1), 1, 1e-12);
  EXPECT_GE(u.min_value(), 0.0);
  EXPECT_GT(u.max_value(), 0.0);
  spec.sign[0] = SignConstraint::free;
  EXPECT_LT(solve_phase(spec, full(g, 1, 1), 1, 1e-12).min_value(), 0.0);
}

TEST(SolvePhase, MaximumPrincipleAndBound) {
  const auto g = make_grid(Grid::box(1, 100));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(0.0, 3.0);
  auto spec = FunctionalSpec::uniform(g, 1, 0.0, 0.0, PowerLaw{}, SignConstraint::free);
  spec.g[0] = ScalarField::from_function(g, [&](const Point&) { return d(rng); });
  const double gmax = spec.g[0].max_value();
  const auto u = solve_phase(spec, full(g, 1, 1), 1, 1e-12);
  EXPECT_GE(u.min_value(), 0.0);
  // -u'' = g/2 <= gmax/2 on (0, 1): u <= (gmax/2) / 8.
  EXPECT_LE(u.max_value(), 0.5 * gmax / 8.0 + 1e-12);
}

TEST(SolvePhase, MinimizesTheFunctionalOnItsRegion) {
  const auto g = make_grid(Grid::box(2, 24));
  auto spec = FunctionalSpec::uniform(g, 1, 0.5, 1.0, PowerLaw{0.1, 0.0, 1.0});
  spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return 4.0 + std::cos(3.0 * x[0]) + x[1]; });
  const auto w = full(g, 1, 1);
  PhaseField u;
  u.u.push_back(solve_phase(spec, w, 1, 1e-12));
  const double best = total(u, w, spec);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1e-2);
  for (int trial = 0; trial < 20; ++trial) {
    PhaseField v = u;
    for (std::size_t c = 0; c < v[0].size(); ++c)
      if (g->in_mask(c)) v[0][c] = std::max(0.0, v[0][c] + d(rng));
    EXPECT_GE(total(v, w, spec), best);
  }
}

TEST(SolvePhase, SecondOrderConvergence) {
  // -u'' = g/2 with u = sin(pi x).
  auto exact = [](double x) { return std::sin(std::numbers::pi * x); };
  std::vector<double> err;
  for (int n : {32, 64, 128}) {
    const auto g = make_grid(Grid::box(1, n));
    auto spec = FunctionalSpec::uniform(g, 1, 0.0, 0.0);
    spec.g[0] = ScalarField::from_function(
        g, [&](const Point& x) { return 2.0 * std::numbers::pi * std::numbers::pi * exact(x[0]); });
    err.push_back(max_error(solve_phase(spec, full(g, 1, 1), 1, 1e-13), exact));
  }
  for (std::size_t k = 1; k < err.size(); ++k) EXPECT_NEAR(std::log2(err[k - 1] / err[k]), 2.0, 0.1);
}

TEST(SolveLandscape, OneDimensional) {
  const auto g = make_grid(Grid::box(1, 128));
  const auto w0 = solve_landscape(g, ScalarField(g), 1e-12);
  EXPECT_NEAR(sample(w0, Point{0.5}), 0.125, 1e-4);
}

TEST(SolveLandscape, UnitSquare) {
  const auto g = make_grid(Grid::box(2, 128));
  const auto w0 = solve_landscape(g, ScalarField(g), 1e-10);
  EXPECT_NEAR(w0.max_value(), oracle::torsion_square_reference(), 1e-3);
}

TEST(SolveLandscape, LargePotential) {
  const auto g = make_grid(Grid::box(2, 32));
  const double tol = 1e-10;
  const auto w0 = solve_landscape(g, ScalarField::constant(g, 1e6), tol);
  EXPECT_LE(w0.max_value(), 1e-6 + tol);
}

TEST(SolveLandscape, RejectsNegativePotential) {
  const auto g = make_grid(Grid::box(1, 16));
  EXPECT_THROW(solve_landscape(g, ScalarField::constant(g, -1.0), 1e-10), PreconditionError);
}

TEST(SolveDirichlet, WarmStartStillConverges) {
  const auto g = make_grid(Grid::box(2, 32));
  const auto w = full(g, 1, 1);
  const auto spec = FunctionalSpec::uniform(g, 1, 0.0, 2.0);
  SolveStats cold, warm;
  const auto u = solve_phase(spec, w, 1, 1e-10, nullptr, &cold);
  const auto v = solve_phase(spec, w, 1, 1e-10, &u, &warm);
  EXPECT_LE(warm.iterations, cold.iterations);
  EXPECT_LE(warm.residual, 1e-10);
  EXPECT_NEAR(v.max_value(), u.max_value(), 1e-9);
}
