#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mfb/minimize.hpp"
#include "mfb/oracle.hpp"

using namespace mfb;

namespace {

void expect_descent(const SolveReport& rep) {
  ASSERT_FALSE(rep.j_history.empty());
  const double slack = 1e-10 * (1.0 + std::abs(rep.j_history.front()));
  for (std::size_t k = 1; k < rep.j_history.size(); ++k)
    EXPECT_LE(rep.j_history[k], rep.j_history[k - 1] + slack);
}

std::vector<double> samples(double (*g)(double), int m) {
  std::vector<double> v(static_cast<std::size_t>(m) + 1);
  for (int k = 0; k <= m; ++k) v[static_cast<std::size_t>(k)] = g(static_cast<double>(k) / m);
  return v;
}

FunctionalSpec two_ramps_1d(int n) {
  const auto g = make_grid(Grid::box(1, n));
  auto spec = FunctionalSpec::uniform(g, 2, 0.0, 0.0, PowerLaw{0.05, 0.0, 1.0});
  spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return 8.0 * (1.0 - x[0]); });
  spec.g[1] = ScalarField::from_function(g, [](const Point& x) { return 8.0 * x[0]; });
  return spec;
}

}  // namespace

TEST(UpdateFields, AllTrashGivesZero) {
  const auto g = make_grid(Grid::box(2, 12));
  const auto spec = FunctionalSpec::uniform(g, 2, 0.0, 3.0);
  const auto u = update_fields(spec, Partition(g, 2), nullptr, 1e-10);
  for (const auto& ui : u.u) EXPECT_EQ(ui.max_abs(), 0.0);
}

TEST(UpdateFields, FullDomainParabola) {
  const auto g = make_grid(Grid::box(1, 128));
  const auto spec = FunctionalSpec::uniform(g, 1, 0.0, 2.0);
  Partition w(g, 1);
  for (std::size_t c = 1; c < 128; ++c) w[c] = 1;
  const auto u = update_fields(spec, w, nullptr, 1e-12);
  for (std::size_t c = 1; c < 128; ++c) {
    const double x = g->center(c)[0];
    EXPECT_NEAR(u[0][c], 0.5 * x * (1.0 - x), 1e-9);
  }
}

TEST(UpdateFields, WorkersDoNotChangeTheResult) {
  const auto spec = two_ramps_1d(64);
  const auto w = initial_partition(spec, {});
  const auto a = update_fields(spec, w, nullptr, 1e-12, 1);
  const auto b = update_fields(spec, w, nullptr, 1e-12, 2);
  for (int i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < a[i].size(); ++c) EXPECT_EQ(a[i][c], b[i][c]);
}

TEST(UpdatePartition, ZeroFieldsAndPositiveCostEmptyEverything) {
  const auto g = make_grid(Grid::box(2, 10));
  const auto spec = FunctionalSpec::uniform(g, 2, 0.0, 1.0, PowerLaw{0.1, 0.0, 1.0});
  const auto w = update_partition(spec, PhaseField::zeros(g, 2), initial_partition(spec, {}));
  EXPECT_EQ(w.count(0), g->size());
}

TEST(UpdatePartition, NegativeCostFillsDomain) {
  const auto g = make_grid(Grid::box(2, 10));
  auto spec = FunctionalSpec::uniform(g, 2, 0.0, 1.0);
  spec.volume_term = PerRegion{{ScalarField::constant(g, -1.0), ScalarField(g)}};
  const auto w = update_partition(spec, PhaseField::zeros(g, 2), Partition(g, 2));
  EXPECT_EQ(w.count(1), g->mask_count());
}

TEST(UpdatePartition, SingleCellComparison) {
  const auto g = make_grid(Grid(1, {3}, 1.0, Point{}, {1, 1, 1}));
  const auto spec = FunctionalSpec::uniform(g, 2, 0.0, 2.0, PowerLaw{0.1, 0.0, 1.0});
  PhaseField u = PhaseField::zeros(g, 2);
  u[0][1] = 0.3;
  Partition w(g, 2);
  w[1] = 1;
  // Costs: phase 1 -0.6 + 0.1 = -0.5, black zone 0, phase 2 0.1.
  EXPECT_EQ(update_partition(spec, u, w)[1], 1);
}

TEST(InitialPartition, SeedsAndStripes) {
  const auto spec = two_ramps_1d(16);
  const auto stripes = initial_partition(spec, {});
  EXPECT_EQ(stripes[2], 1);
  EXPECT_EQ(stripes[14], 2);
  const auto seeded = initial_partition(spec, {Point{0.9}, Point{0.1}});
  EXPECT_EQ(seeded[2], 2);
  EXPECT_EQ(seeded[14], 1);
  EXPECT_THROW(initial_partition(spec, {Point{0.5}}), PreconditionError);
}

TEST(Minimize, NoSourceGivesEmptyPair) {
  const auto g = make_grid(Grid::box(2, 16));
  const auto spec = FunctionalSpec::uniform(g, 1, 0.0, 0.0, PowerLaw{0.1, 0.0, 1.0});
  const auto res = minimize(spec, std::nullopt);
  EXPECT_EQ(res.w.count(0), g->size());
  EXPECT_EQ(res.u[0].max_abs(), 0.0);
  EXPECT_EQ(total(res.u, res.w, spec), 0.0);
  EXPECT_TRUE(res.report.converged);
  expect_descent(res.report);
}

TEST(Minimize, OnePhaseSaturates) {
  const int n = 128;
  const auto g = make_grid(Grid::box(1, n));
  const auto spec = FunctionalSpec::uniform(g, 1, 0.0, 4.0, PowerLaw{0.25, 0.0, 1.0});
  Partition start(g, 1);
  for (std::size_t c = 4; c < 124; ++c) start[c] = 1;
  const auto res = minimize(spec, start);
  expect_descent(res.report);
  EXPECT_EQ(res.w.count(1), g->mask_count());
  // Best support interval: J(s) = -s^3/3 + s/4 is largest at s = 1/2, so s = 1 wins.
  const auto scan = oracle::two_phase_1d(samples(+[](double) { return 4.0; }, 1000),
                                         samples(+[](double) { return 0.0; }, 1000), 0.25, 0.0, 10000);
  EXPECT_EQ(scan.kind, "phase1_fills");
  EXPECT_NEAR(scan.j_star, -1.0 / 12.0, 1e-9);
  EXPECT_NEAR(total(res.u, res.w, spec), scan.j_star, 2.0 / n);
}

TEST(Minimize, TwoPhaseInterfaceMatchesScan) {
  const int n = 128;
  const auto spec = two_ramps_1d(n);
  const auto res = minimize(spec, std::nullopt);
  expect_descent(res.report);
  const auto scan = oracle::two_phase_1d(samples(+[](double x) { return 8.0 * (1.0 - x); }, 2000),
                                         samples(+[](double x) { return 8.0 * x; }, 2000), 0.05, 0.05, 10000);
  std::ptrdiff_t last = -1;
  for (std::size_t c = 0; c < res.w.size(); ++c)
    if (res.w[c] == 1) last = static_cast<std::ptrdiff_t>(c);
  const double h = 1.0 / n;
  const double s = last < 0 ? 0.0 : res.w.grid().center(static_cast<std::size_t>(last))[0] + 0.5 * h;
  double best = 1.0;
  for (double t : scan.s_ties) best = std::min(best, std::abs(t - s));
  EXPECT_LE(best, 2.0 * h);
  EXPECT_LE(std::abs(total(res.u, res.w, spec) - scan.j_star), 5e-3);
}

TEST(Minimize, FinalPairIsLocallyStationary) {
  const auto g = make_grid(Grid::box(2, 14));
  auto spec = FunctionalSpec::uniform(g, 2, 0.0, 0.0, PowerLaw{0.05, 0.0, 1.0});
  spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return std::max(0.0, 40.0 - 128.0 * x[0]); });
  spec.g[1] = ScalarField::from_function(g, [](const Point& x) { return std::max(0.0, 128.0 * x[0] - 88.0); });
  const MinimizeOptions opts;
  const auto res = minimize(spec, std::nullopt, opts, {Point{0.25, 0.5}, Point{0.75, 0.5}});
  expect_descent(res.report);
  const double j = total(res.u, res.w, spec);
  const double tol = opts.tol_j * (1.0 + std::abs(j));
  for (std::size_t c = 0; c < g->size(); ++c) {
    if (!g->in_mask(c)) continue;
    for (int to = 0; to <= 2; ++to) {
      if (to == res.w[c]) continue;
      Partition w = res.w;
      w[c] = to;
      const auto u = update_fields(spec, w, &res.u, opts.tol_solve);
      EXPECT_GE(total(u, w, spec), j - tol) << "cell " << c << " to " << to;
    }
  }
  for (int i = 1; i <= 2; ++i) {
    PhaseField u = res.u;
    u[i - 1] = solve_phase(spec, res.w, i, opts.tol_solve);
    EXPECT_GE(total(u, res.w, spec), j - tol);
  }
}

TEST(Minimize, PositiveSourcesLeaveNoZeroSet) {
  const auto g = make_grid(Grid::box(2, 32));
  auto spec = FunctionalSpec::uniform(g, 2, 0.0, 2.0);
  spec.volume_term = PerRegion{{ScalarField(g), ScalarField(g)}};
  const auto res = minimize(spec, std::nullopt);
  expect_descent(res.report);
  EXPECT_LE(res.report.zero_set_fraction, 0.05);
}

TEST(Minimize, VolumeFloorStableUnderRefinement) {
  std::vector<double> vols;
  for (int n : {32, 64}) {
    const auto g = make_grid(Grid::box(2, n));
    auto spec = FunctionalSpec::uniform(g, 1, 0.0, 0.0, PowerLaw{2.0, 0.0, 1.0});
    spec.g[0] = ScalarField::from_function(g, [](const Point& x) {
      return 100.0 * std::max(0.0, 1.0 - distance(x, Point{0.5, 0.5}, 2) / 0.2);
    });
    const auto res = minimize(spec, std::nullopt, {}, {Point{0.5, 0.5}});
    expect_descent(res.report);
    vols.push_back(res.report.final_volumes[0]);
  }
  EXPECT_GT(vols[0], 0.0);
  EXPECT_LT(std::abs(vols[1] - vols[0]) / vols[0], 0.25);
}

TEST(Minimize, ReportCsvHeader) {
  const auto spec = two_ramps_1d(32);
  const auto res = minimize(spec, std::nullopt);
  std::ostringstream os;
  write_solve_report_csv(os, res.report);
  const std::string text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "iteration,J,volume_1,volume_2");
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')),
            res.report.j_history.size() + 1);
}
