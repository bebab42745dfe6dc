#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mfb/diagnostics.hpp"
#include "mfb/minimize.hpp"
#include "mfb/oracle.hpp"

using namespace mfb;

namespace {

constexpr double kPi = std::numbers::pi;
const Point kOrigin{};
const Point kX{1.0, 0.0, 0.0};

const GridPtr& cone_grid() {
  static const GridPtr g = make_grid(Grid::centered(2, 100, 1.0 / 256));
  return g;
}

PhaseField one_phase(double a) { return oracle::make_cone(oracle::OnePhaseCone{a, kX}, cone_grid()); }

PhaseField two_phase(double a1, double a2) {
  return oracle::make_cone(oracle::TwoPhaseCone{a1, a2, kX}, cone_grid());
}

FunctionalSpec cone_spec(int n, SignConstraint sc = SignConstraint::nonnegative) {
  return FunctionalSpec::uniform(cone_grid(), n, 0.0, 0.0, PowerLaw{}, sc);
}

PhaseField padded(PhaseField u, int n) {
  while (u.num_phases() < n) u.u.emplace_back(u.grid_ptr());
  return u;
}

const std::vector<double> kRadii{0.1, 0.15, 0.2, 0.25, 0.3};

void expect_all_near(const RadialProfile& p, double want, double rel) {
  for (double v : p.values) EXPECT_NEAR(v, want, rel * want);
}

}  // namespace

TEST(RadialEnergy, Zero) {
  const auto p = radial_energy(PhaseField::zeros(cone_grid(), 1), kOrigin, {0.1, 0.2});
  for (double v : p.values) EXPECT_EQ(v, 0.0);
}

TEST(RadialEnergy, HalfPlaneCone) {
  const auto p = radial_energy(one_phase(1.0), kOrigin, {0.1, 0.2});
  for (std::size_t k = 0; k < 2; ++k)
    EXPECT_NEAR(p.values[k], kPi * p.radii[k] * p.radii[k] / 2.0, 0.03 * kPi * p.radii[k] * p.radii[k] / 2.0);
}

TEST(Acf, ZeroPhase) {
  const auto p = acf_profile(PhaseField::zeros(cone_grid(), 1), {1, 1}, kOrigin, kRadii);
  for (double v : p.values) EXPECT_EQ(v, 0.0);
}

TEST(Acf, UnitCone) { expect_all_near(acf_profile(one_phase(1.0), {1, 1}, kOrigin, kRadii), kPi / 2.0, 0.03); }

TEST(Acf, QuadraticScaling) {
  const auto a = acf_profile(one_phase(1.0), {1, 1}, kOrigin, kRadii);
  const auto b = acf_profile(one_phase(2.5), {1, 1}, kOrigin, kRadii);
  for (std::size_t k = 0; k < kRadii.size(); ++k) EXPECT_NEAR(b.values[k], 6.25 * a.values[k], 1e-12 * b.values[k]);
}

TEST(Acf, ProductOnTwoPlaneCone) {
  const double a1 = 2.0, a2 = 1.0;
  const auto prod = acf_product(two_phase(a1, a2), {1, 1}, {2, 1}, kOrigin, kRadii);
  expect_all_near(prod.profile, a1 * a1 * a2 * a2 * kPi * kPi / 4.0, 0.05);
  EXPECT_LE(prod.violation, 0.05);
}

TEST(Acf, ProductWithEmptyPhase) {
  const auto u = padded(one_phase(1.0), 2);
  const auto prod = acf_product(u, {1, 1}, {2, 1}, kOrigin, kRadii);
  for (double v : prod.profile.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(prod.violation, 0.0);
}

TEST(Acf, SignedPartsOfAFreePhase) {
  // One free component carrying both planes: u = 2 x+ - x-.
  PhaseField u = two_phase(2.0, 1.0);
  for (std::size_t c = 0; c < u[0].size(); ++c) u[0][c] -= u[1][c];
  u.u.pop_back();
  const auto p = acf_product(u, {1, 1}, {1, -1}, kOrigin, kRadii);
  expect_all_near(p.profile, kPi * kPi, 0.05);
}

TEST(Acf, InvariantUnderRescaling) {
  const auto g = cone_grid();
  PhaseField u;
  u.u.push_back(ScalarField::from_function(g, [](const Point& x) { return std::max(0.0, x[0] * (1.0 + x[1])); }));
  const double rk = 0.5;
  const auto blown = blowup_rescale(u, kOrigin, rk);
  const std::vector<double> small{0.1, 0.15, 0.2};
  std::vector<double> scaled;
  for (double r : small) scaled.push_back(rk * r);
  const auto a = acf_profile(blown, {1, 1}, kOrigin, small);
  const auto b = acf_profile(u, {1, 1}, kOrigin, scaled);
  for (std::size_t k = 0; k < small.size(); ++k) EXPECT_NEAR(a.values[k], b.values[k], 0.03 * b.values[k]);
}

TEST(Acf, RejectsBadRadii) {
  EXPECT_THROW(acf_profile(one_phase(1.0), {1, 1}, kOrigin, {0.2, 0.1}), PreconditionError);
  EXPECT_THROW(acf_profile(one_phase(1.0), {1, 1}, kOrigin, {1.0 / 256}), PreconditionError);
}

TEST(Weiss, Zero) {
  const auto p = weiss_profile(PhaseField::zeros(cone_grid(), 1), 1, 1.0, kOrigin, kRadii);
  for (double v : p.values) EXPECT_EQ(v, 0.0);
}

TEST(Weiss, ConstantOnCones) {
  expect_all_near(weiss_profile(one_phase(1.0), 1, 1.0, kOrigin, kRadii), kPi / 2.0, 0.05);
  // Gradient and radial terms cancel for any slope; each is a^2 pi / 2.
  const double a = 3.0;
  for (double v : weiss_profile(one_phase(a), 1, 1.0, kOrigin, kRadii).values)
    EXPECT_NEAR(v, kPi / 2.0, 0.05 * a * a * kPi / 2.0);
}

TEST(Density, HalfDiskRatios) {
  const auto rep = density_report(one_phase(1.0), 1, kOrigin, 0.25);
  EXPECT_NEAR(rep.positive_volume, kPi / 2.0, 0.03 * kPi / 2.0);
  EXPECT_NEAR(rep.complement, kPi / 2.0, 0.03 * kPi / 2.0);
  EXPECT_GT(rep.mean_square, 0.0);
  EXPECT_NEAR(rep.interior, 1.0, 0.05);
}

TEST(Density, RequiresFreeBoundaryPoint) {
  EXPECT_THROW(density_report(one_phase(1.0), 1, Point{-0.2, 0.0}, 0.1), PreconditionError);
  EXPECT_THROW(density_report(one_phase(1.0), 1, Point{0.2, 0.0}, 0.1), PreconditionError);
}

TEST(InterfaceMeasure, DensityEqualsSlope) {
  const auto spec = cone_spec(1);
  const auto rep = interface_measure(one_phase(2.0), spec, 1, kOrigin, {0.05, 0.1, 0.2});
  EXPECT_NEAR(rep.h_density, 2.0, 0.1);
  for (double m : rep.mu_density) EXPECT_GE(m, 0.0);
  const auto el = el_interface_check(one_phase(2.0), oracle::support_partition(one_phase(2.0)), spec, kOrigin, 0.2,
                                     std::vector<double>{4.0});
  EXPECT_NEAR(rep.h_density, el.a1, 0.1 * el.a1);
}

TEST(InterfaceMeasure, SmoothPositiveFieldHasNoMeasure) {
  const auto g = cone_grid();
  auto spec = cone_spec(1);
  const double k = 2.0;
  // -Lap v = g/2 with v = 3 + cos(k x): g = 2 k^2 cos(k x).
  spec.g[0] = ScalarField::from_function(g, [&](const Point& x) { return 2.0 * k * k * std::cos(k * x[0]); });
  PhaseField u;
  u.u.push_back(ScalarField::from_function(g, [&](const Point& x) { return 3.0 + std::cos(k * x[0]); }));
  const Point hole{-0.2, -0.2};
  for (std::size_t c = 0; c < g->size(); ++c)
    if (distance(g->center(c), hole, 2) < 0.01) u[0][c] = 0.0;
  const Point x0 = nearest_point(free_boundary_points(u, {1, 1}), Point{-0.19, -0.2}, 2);
  // Both balls hold the whole hole; the annulus between them adds nothing.
  const auto rep = interface_measure(u, spec, 1, x0, {0.04, 0.08});
  double hole_source = 0.0;
  for (std::size_t c = 0; c < g->size(); ++c)
    if (u[0][c] == 0.0) hole_source += 0.5 * spec.g[0][c] * g->cell_volume();
  EXPECT_NEAR(rep.mu[0], -hole_source, 0.15 * hole_source);
  EXPECT_NEAR(rep.mu[1], rep.mu[0], 1e-3 * std::abs(rep.mu[0]));
}

TEST(SlopeLaw, TwoPlaneCone) {
  const auto u = two_phase(1.118, 1.0);
  const auto rep = el_interface_check(u, oracle::support_partition(u), cone_spec(2), kOrigin, 0.2,
                                      std::vector<double>{0.5, 0.25});
  EXPECT_TRUE(rep.two_phase);
  EXPECT_LE(rep.residual, 0.05);
  EXPECT_NEAR(rep.normal[0], 1.0, 1e-6);
}

TEST(SlopeLaw, OnePhaseCone) {
  const auto u = padded(one_phase(1.0), 3);
  const auto rep = el_interface_check(u, oracle::support_partition(u), cone_spec(3), kOrigin, 0.2,
                                      std::vector<double>{1.0, 0.5, 0.2});
  EXPECT_FALSE(rep.two_phase);
  EXPECT_DOUBLE_EQ(rep.target, 1.0);
  EXPECT_LE(rep.residual, 0.05);
}

TEST(SlopeLaw, EmptyBallRejected) {
  const auto u = PhaseField::zeros(cone_grid(), 1);
  EXPECT_THROW(el_interface_check(u, Partition(cone_grid(), 1), cone_spec(1), kOrigin, 0.2), PreconditionError);
}

TEST(Flatness, PlanarInterface) {
  const double h = cone_grid()->spacing();
  const auto rep = flatness(two_phase(2.0, 1.0), {1, 1}, Phase{2, 1}, kOrigin, kRadii);
  for (std::size_t k = 0; k < kRadii.size(); ++k) EXPECT_LE(rep.beta.values[k], 2.0 * h / kRadii[k]);
}

TEST(Flatness, SinusoidalInterface) {
  const auto g = make_grid(Grid::centered(2, 80, 1.0 / 128));
  auto wave = [](const Point& x) { return x[1] - 0.1 * std::sin(10.0 * x[0]); };
  PhaseField u;
  u.u.push_back(ScalarField::from_function(g, [&](const Point& x) { return std::max(0.0, wave(x)); }));
  u.u.push_back(ScalarField::from_function(g, [&](const Point& x) { return std::max(0.0, -wave(x)); }));
  const auto rep = flatness(u, {1, 1}, Phase{2, 1}, kOrigin, {0.5});
  EXPECT_NEAR(rep.beta.values[0], 0.2, 0.05);
}

TEST(Blowup, IdentityAtUnitScale) {
  const auto u = two_phase(2.0, 1.0);
  const auto b = blowup_rescale(u, kOrigin, 1.0);
  for (int i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < u[i].size(); ++c) EXPECT_NEAR(b[i][c], u[i][c], 1e-14);
}

TEST(Blowup, ConeIsAFixedPoint) {
  const auto u = one_phase(1.5);
  const auto b = blowup_rescale(u, kOrigin, 0.25);
  const double h = cone_grid()->spacing();
  for (std::size_t c = 0; c < u[0].size(); ++c) EXPECT_NEAR(b[0][c], u[0][c], 1.5 * h);
}

TEST(Blowup, WindowMustFit) {
  EXPECT_NO_THROW(blowup_rescale(one_phase(1.0), Point{0.3, 0.0}, 0.5));
  EXPECT_THROW(blowup_rescale(one_phase(1.0), Point{0.3, 0.0}, 2.0), PreconditionError);
  EXPECT_THROW(blowup_rescale(one_phase(1.0), kOrigin, 1.0 / 256), PreconditionError);
}

TEST(Blowup, SlopeResidualOnMinimizer) {
  const auto g = make_grid(Grid::box(2, 64));
  auto spec = FunctionalSpec::uniform(g, 2, 0.0, 0.0, PowerLaw{0.05, 0.0, 1.0});
  spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return std::max(0.0, 40.0 - 128.0 * x[0]); });
  spec.g[1] = ScalarField::from_function(g, [](const Point& x) { return std::max(0.0, 128.0 * x[0] - 88.0); });
  const auto res = minimize(spec, std::nullopt, {}, {Point{0.25, 0.5}, Point{0.75, 0.5}});
  const auto pts = interface_points(res.u, {1, 1}, {2, 1});
  ASSERT_FALSE(pts.empty());
  const Point x0 = nearest_point(pts, Point{0.5, 0.5}, 2);
  double prev = std::numeric_limits<double>::infinity();
  for (double rk : {0.4, 0.2}) {
    const auto b = blowup_rescale(res.u, x0, rk);
    const auto bspec = FunctionalSpec::uniform(b.grid_ptr(), 2, 0.0, 0.0);
    const auto rep = el_interface_check(b, oracle::support_partition(b), bspec, kOrigin, 0.5,
                                        std::vector<double>{0.05, 0.05});
    EXPECT_LE(rep.residual, prev + 0.05);
    prev = rep.residual;
  }
}

TEST(PhaseCount, InteriorAndJunction) {
  const auto u = two_phase(2.0, 1.0);
  const auto sign = cone_spec(2).sign;
  const double h = cone_grid()->spacing();
  EXPECT_EQ(phase_count_at(u, sign, Point{0.2, 0.0}, 4.0 * h), 0);
  EXPECT_EQ(phase_count_at(u, sign, kOrigin, 4.0 * h), 2);
  const auto one = padded(one_phase(1.0), 2);
  EXPECT_EQ(phase_count_at(one, sign, kOrigin, 4.0 * h), 1);
}

TEST(Lipschitz, ConstantAndRamp) {
  const auto g = cone_grid();
  EXPECT_EQ(lipschitz_estimate(ScalarField::constant(g, 4.0)), 0.0);
  EXPECT_NEAR(lipschitz_estimate(one_phase(3.0)), 3.0, 1e-12);
  EXPECT_NEAR(lipschitz_estimate(one_phase(1.0)), 1.0, 1e-12);
}

TEST(Lipschitz, StableUnderRefinement) {
  std::vector<double> est;
  for (int n : {64, 128, 256}) {
    const auto g = make_grid(Grid::box(1, n));
    auto spec = FunctionalSpec::uniform(g, 2, 0.0, 0.0, PowerLaw{0.05, 0.0, 1.0});
    spec.g[0] = ScalarField::from_function(g, [](const Point& x) { return 8.0 * (1.0 - x[0]); });
    spec.g[1] = ScalarField::from_function(g, [](const Point& x) { return 8.0 * x[0]; });
    est.push_back(lipschitz_estimate(minimize(spec, std::nullopt).u));
  }
  for (std::size_t k = 1; k < est.size(); ++k) EXPECT_LT(std::abs(est[k] - est[k - 1]) / est[k - 1], 0.1);
}

TEST(Points, InterfaceAndFreeBoundary) {
  const auto u = two_phase(2.0, 1.0);
  const auto ip = interface_points(u, {1, 1}, {2, 1});
  ASSERT_FALSE(ip.empty());
  const double h = cone_grid()->spacing();
  for (const auto& p : ip) EXPECT_NEAR(p[0], 0.0, 0.5 * h);
  const auto one = one_phase(1.0);
  const auto fb = free_boundary_points(one, {1, 1});
  ASSERT_FALSE(fb.empty());
  for (const auto& p : fb) EXPECT_NEAR(std::abs(p[0]), 0.5 * h, 0.5 * h + 1e-12);
  const Point q{0.0, 0.1};
  const Point best = nearest_point(ip, q, 2);
  for (const auto& p : ip) EXPECT_GE(distance(p, q, 2), distance(best, q, 2));
}

TEST(Profiles, CsvLayout) {
  const auto p = acf_profile(one_phase(1.0), {1, 1}, kOrigin, {0.1, 0.2});
  std::ostringstream os;
  write_profile_csv(os, p);
  EXPECT_EQ(os.str().substr(0, 8), "r,value\n");
  EXPECT_STREQ(to_string(p.kind), "acf");
}
