#pragma once

// Batch pipeline behind the command-line tool: build a problem from a
// Config, run the requested stages and write every artifact to a directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mfb/competitors.hpp"
#include "mfb/config.hpp"
#include "mfb/diagnostics.hpp"
#include "mfb/elliptic.hpp"
#include "mfb/field_io.hpp"
#include "mfb/functional.hpp"
#include "mfb/minimize.hpp"
#include "mfb/oracle.hpp"

namespace mfb {

/// Coefficient expression, evaluated at a point:
///   <number>               constant
///   linear:c0,c1[,c2]      c0 + c1 x + c2 y
///   ramp:c0,c1[,c2]        max(0, c0 + c1 x + c2 y)
///   bump:A,cx[,cy],rho     A max(0, 1 - |x - c| / rho)
///   file:<path>            ScalarField file (relative to the config)
struct Coefficient {
  enum class Kind { constant, linear, ramp, bump, file } kind = Kind::constant;
  std::vector<double> p;
  std::string path;

  bool pointwise() const noexcept { return kind != Kind::file; }

  double operator()(const Point& x, int dim) const {
    switch (kind) {
      case Kind::constant: return p[0];
      case Kind::linear:
      case Kind::ramp: {
        double v = p[0];
        for (int d = 0; d < dim; ++d) v += p[static_cast<std::size_t>(d) + 1] * x[d];
        return kind == Kind::ramp ? std::max(0.0, v) : v;
      }
      case Kind::bump: {
        Point c{};
        for (int d = 0; d < dim; ++d) c[d] = p[static_cast<std::size_t>(d) + 1];
        return p[0] * std::max(0.0, 1.0 - distance(x, c, dim) / p[static_cast<std::size_t>(dim) + 1]);
      }
      case Kind::file: break;
    }
    throw PreconditionError("file coefficients have no pointwise form");
  }
};

inline Coefficient parse_coefficient(const std::string& key, const std::string& text, int dim) {
  Coefficient c;
  auto numbers = [&](const std::string& body) {
    std::vector<double> v;
    for (const auto& item : detail::split(body, ',')) {
      const auto x = detail::parse_double(item);
      if (!x) throw ConfigError(key, "bad number '" + item + "' in coefficient");
      v.push_back(*x);
    }
    return v;
  };
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    const auto v = detail::parse_double(text);
    if (!v) throw ConfigError(key, "expected a number or a coefficient form");
    c.p = {*v};
    return c;
  }
  const std::string head = text.substr(0, colon), body = text.substr(colon + 1);
  const auto n = static_cast<std::size_t>(dim);
  if (head == "file") {
    c.kind = Coefficient::Kind::file;
    c.path = detail::trim(body);
    if (c.path.empty()) throw ConfigError(key, "empty file path");
  } else if (head == "linear" || head == "ramp") {
    c.kind = head == "linear" ? Coefficient::Kind::linear : Coefficient::Kind::ramp;
    c.p = numbers(body);
    if (c.p.size() != n + 1) throw ConfigError(key, head + " needs " + std::to_string(n + 1) + " numbers");
  } else if (head == "bump") {
    c.kind = Coefficient::Kind::bump;
    c.p = numbers(body);
    if (c.p.size() != n + 2) throw ConfigError(key, "bump needs " + std::to_string(n + 2) + " numbers");
    if (!(c.p.back() > 0.0)) throw ConfigError(key, "bump radius must be positive");
  } else {
    throw ConfigError(key, "unknown coefficient form '" + head + "'");
  }
  return c;
}

inline ScalarField realize(const Coefficient& c, const GridPtr& grid, const std::string& key,
                           const std::string& base_dir) {
  if (c.kind == Coefficient::Kind::file) {
    const std::string path = c.path.front() == '/' ? c.path : base_dir + "/" + c.path;
    try {
      return load_field(path, grid);
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  }
  try {
    return ScalarField::from_function(grid, [&](const Point& x) { return c(x, grid->dim()); });
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

struct RunOptions {
  std::string out_dir = "out";
  int workers = 1;
  std::uint64_t seed = 1;
};

/// Everything read from a Config, validated.
struct RunPlan {
  GridPtr grid;
  std::vector<std::string> stages;
  std::optional<FunctionalSpec> spec;
  std::vector<Coefficient> g_coeffs;
  std::optional<ScalarField> potential;
  MinimizeOptions minimize;
  std::vector<Point> seeds;
  double tol_mono = 0.05;
  int audit_count = 20;
  double audit_r_min = 0.05;
  double audit_r_max = 0.2;
  int interface_count = 5;
  int fb_count = 10;
  std::vector<double> profile_radii{0.025, 0.05, 0.075, 0.1, 0.15};
  std::vector<double> density_radii{0.05, 0.1, 0.2};
  double fit_radius = 0.2;
  int oracle_samples = 10000;
  int oracle_s_grid = 10000;

  bool has_stage(const std::string& s) const {
    return std::find(stages.begin(), stages.end(), s) != stages.end();
  }
};

inline RunPlan make_plan(const Config& cfg) {
  RunPlan plan;
  const long dim = cfg.get_int("grid.dim");
  if (dim < 1 || dim > 2) throw ConfigError("grid.dim", "must be 1 or 2");
  const long intervals = cfg.get_int("grid.intervals");
  if (intervals < 4) throw ConfigError("grid.intervals", "must be at least 4");
  const double lo = cfg.get_double("grid.lo", 0.0), hi = cfg.get_double("grid.hi", 1.0);
  if (!(hi > lo)) throw ConfigError("grid.hi", "must exceed grid.lo");
  Grid grid = Grid::box(static_cast<int>(dim), intervals, lo, hi);
  if (cfg.has("grid.mask")) {
    const std::string path = cfg.get_string("grid.mask");
    try {
      const ScalarField m = load_field(path.front() == '/' ? path : cfg.base_dir() + "/" + path,
                                       make_grid(grid));
      std::vector<std::uint8_t> mask(grid.size());
      for (std::size_t c = 0; c < mask.size(); ++c) mask[c] = m[c] != 0.0 ? 1 : 0;
      grid = grid.with_mask(std::move(mask));
    } catch (const Error& e) {
      throw ConfigError("grid.mask", e.what());
    }
  }
  plan.grid = make_grid(std::move(grid));
  const int n = static_cast<int>(dim);

  plan.stages = detail::split(cfg.get_string("pipeline.stages", "minimize"), ',');
  for (const auto& s : plan.stages)
    if (s != "landscape" && s != "minimize" && s != "diagnose" && s != "audit" && s != "oracle")
      throw ConfigError("pipeline.stages", "unknown stage '" + s + "'");
  const bool need_spec = plan.has_stage("minimize") || plan.has_stage("diagnose") ||
                         plan.has_stage("audit") || plan.has_stage("oracle");
  if ((plan.has_stage("diagnose") || plan.has_stage("audit") || plan.has_stage("oracle")) &&
      !plan.has_stage("minimize"))
    throw ConfigError("pipeline.stages", "diagnose, audit and oracle need the minimize stage");

  if (plan.has_stage("landscape"))
    plan.potential = realize(parse_coefficient("pipeline.potential",
                                               cfg.get_string("pipeline.potential", "0"), n),
                             plan.grid, "pipeline.potential", cfg.base_dir());
  if (plan.potential && plan.potential->min_value() < 0.0)
    throw ConfigError("pipeline.potential", "must be >= 0");

  if (need_spec) {
    FunctionalSpec spec;
    spec.grid = plan.grid;
    const long phases = cfg.get_int("spec.num_phases");
    if (phases < 1 || phases > 16) throw ConfigError("spec.num_phases", "must be in [1, 16]");
    spec.num_phases = static_cast<int>(phases);
    for (int i = 1; i <= spec.num_phases; ++i) {
      const std::string fk = "spec.f." + std::to_string(i), gk = "spec.g." + std::to_string(i);
      const std::string sk = "spec.sign." + std::to_string(i);
      spec.f.push_back(realize(parse_coefficient(fk, cfg.get_string(fk, "0"), n), plan.grid, fk,
                               cfg.base_dir()));
      if (spec.f.back().min_value() < 0.0) throw ConfigError(fk, "must be >= 0");
      plan.g_coeffs.push_back(parse_coefficient(gk, cfg.get_string(gk, "0"), n));
      spec.g.push_back(realize(plan.g_coeffs.back(), plan.grid, gk, cfg.base_dir()));
      const std::string sign = cfg.get_string(sk, "nonnegative");
      if (sign == "nonnegative")
        spec.sign.push_back(SignConstraint::nonnegative);
      else if (sign == "free")
        spec.sign.push_back(SignConstraint::free);
      else
        throw ConfigError(sk, "must be 'nonnegative' or 'free'");
    }
    const std::string kind = cfg.get_string("volume_term.kind", "power_law");
    if (kind == "power_law") {
      PowerLaw p;
      p.a = cfg.get_double("volume_term.a", 0.0);
      p.b = cfg.get_double("volume_term.b", 0.0);
      p.alpha = cfg.get_double("volume_term.alpha", 1.0);
      if (p.a < 0.0) throw ConfigError("volume_term.a", "must be >= 0");
      if (p.b < 0.0) throw ConfigError("volume_term.b", "must be >= 0");
      if (!(p.alpha > 0.0)) throw ConfigError("volume_term.alpha", "must be > 0");
      spec.volume_term = p;
    } else if (kind == "per_region") {
      PerRegion pr;
      for (int i = 1; i <= spec.num_phases; ++i) {
        const std::string qk = "volume_term.q." + std::to_string(i);
        pr.q.push_back(realize(parse_coefficient(qk, cfg.get_string(qk, "0"), n), plan.grid, qk,
                               cfg.base_dir()));
      }
      spec.volume_term = std::move(pr);
    } else {
      throw ConfigError("volume_term.kind", "must be 'power_law' or 'per_region'");
    }
    spec.validate();
    plan.spec = std::move(spec);
  }

  plan.minimize.max_outer = static_cast<int>(cfg.get_int("pipeline.max_outer", 400));
  plan.minimize.tol_j = cfg.get_double("pipeline.tol_j", 1e-9);
  plan.minimize.tol_solve = cfg.get_double("pipeline.tol_solve", 1e-10);
  if (plan.minimize.max_outer < 1) throw ConfigError("pipeline.max_outer", "must be >= 1");
  if (!(plan.minimize.tol_j > 0.0)) throw ConfigError("pipeline.tol_j", "must be > 0");
  if (!(plan.minimize.tol_solve > 0.0)) throw ConfigError("pipeline.tol_solve", "must be > 0");
  plan.tol_mono = cfg.get_double("pipeline.tol_mono", 0.05);
  if (cfg.has("spec.seeds")) {
    plan.seeds = cfg.get_points("spec.seeds", n);
    if (plan.spec && static_cast<int>(plan.seeds.size()) != plan.spec->num_phases)
      throw ConfigError("spec.seeds", "need one seed point per phase");
  }

  plan.audit_count = static_cast<int>(cfg.get_int("probes.count", plan.audit_count));
  plan.audit_r_min = cfg.get_double("probes.r_min", plan.audit_r_min);
  plan.audit_r_max = cfg.get_double("probes.r_max", plan.audit_r_max);
  if (plan.audit_count < 0) throw ConfigError("probes.count", "must be >= 0");
  if (!(plan.audit_r_min > 0.0)) throw ConfigError("probes.r_min", "must be > 0");
  if (!(plan.audit_r_max >= plan.audit_r_min)) throw ConfigError("probes.r_max", "must be >= probes.r_min");
  plan.interface_count = static_cast<int>(cfg.get_int("probes.interface_count", plan.interface_count));
  plan.fb_count = static_cast<int>(cfg.get_int("probes.fb_count", plan.fb_count));
  if (plan.interface_count < 0) throw ConfigError("probes.interface_count", "must be >= 0");
  if (plan.fb_count < 0) throw ConfigError("probes.fb_count", "must be >= 0");
  if (cfg.has("probes.radii")) plan.profile_radii = cfg.get_list("probes.radii");
  if (cfg.has("probes.density_radii")) plan.density_radii = cfg.get_list("probes.density_radii");
  plan.fit_radius = cfg.get_double("probes.fit_radius", plan.fit_radius);
  const double h = plan.grid->spacing();
  auto check_radii = [&](const std::vector<double>& r, const char* key) {
    for (std::size_t k = 0; k < r.size(); ++k)
      if (!(r[k] > 2.0 * h) || (k && !(r[k] > r[k - 1])))
        throw ConfigError(key, "radii must be increasing and exceed 2h");
  };
  if (plan.has_stage("diagnose")) {
    check_radii(plan.profile_radii, "probes.radii");
    check_radii(plan.density_radii, "probes.density_radii");
    if (!(plan.fit_radius > 4.0 * h)) throw ConfigError("probes.fit_radius", "must exceed 4h");
  }

  plan.oracle_samples = static_cast<int>(cfg.get_int("pipeline.oracle_samples", plan.oracle_samples));
  plan.oracle_s_grid = static_cast<int>(cfg.get_int("pipeline.oracle_s_grid", plan.oracle_s_grid));
  if (plan.oracle_samples < 2) throw ConfigError("pipeline.oracle_samples", "must be >= 2");
  if (plan.oracle_s_grid < 1000) throw ConfigError("pipeline.oracle_s_grid", "must be >= 1000");
  if (plan.has_stage("oracle")) {
    const auto* p = std::get_if<PowerLaw>(&plan.spec->volume_term);
    if (n != 1 || plan.spec->num_phases != 2 || !p || p->b != 0.0 || lo != 0.0 || hi != 1.0)
      throw ConfigError("pipeline.stages",
                        "oracle needs a 1D problem on (0, 1) with two phases and b = 0");
    for (int i = 0; i < 2; ++i)
      if (!plan.g_coeffs[static_cast<std::size_t>(i)].pointwise())
        throw ConfigError("spec.g." + std::to_string(i + 1), "oracle needs a pointwise source");
  }
  cfg.check_all_used();
  return plan;
}

/// Ordered `key = value` report.
class Summary {
 public:
  void add(const std::string& key, const std::string& value) { rows_.emplace_back(key, value); }
  void add(const std::string& key, double value) { add(key, format_double(value)); }
  void add(const std::string& key, long value) { add(key, std::to_string(value)); }
  void add(const std::string& key, int value) { add(key, std::to_string(value)); }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }

  std::optional<std::string> get(const std::string& key) const {
    for (const auto& [k, v] : rows_)
      if (k == key) return v;
    return std::nullopt;
  }
  double number(const std::string& key) const {
    const auto v = get(key);
    if (!v) throw Error("summary has no entry '" + key + "'");
    const auto d = detail::parse_double(*v);
    if (!d) throw Error("summary entry '" + key + "' is not a number");
    return *d;
  }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : rows_) os << k << " = " << v << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> rows_;
};

struct InterfaceProbe {
  Point x0{};
  AcfProduct acf;
  ElReport el;
  RadialProfile beta;
};

struct DensityProbe {
  Point x0{};
  int phase = 1;
  double r = 0.0;
  DensityReport report;
  double mu_density = 0.0;
};

struct OracleComparison {
  oracle::TwoPhaseScan scan;
  double interface_location = 0.0;
  double interface_distance = 0.0;  // to the nearest tied argmin
  double gap = 0.0;                 // |J - J*|
};

struct PipelineResult {
  RunPlan plan;
  Summary summary;
  std::optional<ScalarField> landscape;
  std::optional<MinimizeResult> minimized;
  std::vector<InterfaceProbe> interface_probes;
  std::vector<DensityProbe> density_probes;
  std::optional<AuditReport> audit;
  std::optional<OracleComparison> oracle;
  int phase_count_interior = -1;
  int phase_count_boundary = -1;
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Up to `count` entries of `pts`, drawn without replacement, keeping only
/// points whose distance to the bounding box exceeds `margin`.
inline std::vector<Point> pick(const Grid& g, std::vector<Point> pts, int count, double margin,
                               std::mt19937_64& rng) {
  const Point lo = g.lower(), hi = g.upper();
  std::erase_if(pts, [&](const Point& x) {
    for (int d = 0; d < g.dim(); ++d)
      if (x[d] - lo[d] <= margin || hi[d] - x[d] <= margin) return true;
    return false;
  });
  std::vector<Point> out;
  while (static_cast<int>(out.size()) < count && !pts.empty()) {
    const auto k = static_cast<std::size_t>(unit(rng) * static_cast<double>(pts.size()));
    out.push_back(pts[std::min(k, pts.size() - 1)]);
    pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(std::min(k, pts.size() - 1)));
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error("write to '" + path.string() + "' failed");
}

template <class Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
  std::ostringstream os;
  fn(os);
  write_text(path, os.str());
}

inline std::string point_text(const Point& x, int dim) {
  std::string s;
  for (int d = 0; d < dim; ++d) s += (d ? " " : "") + format_double(x[d]);
  return s;
}

/// Midpoint between the last phase-1 node and the next node to its right.
inline double interface_location_1d(const Partition& w) {
  const Grid& g = w.grid();
  std::ptrdiff_t last = -1;
  for (std::size_t c = 0; c < w.size(); ++c)
    if (w[c] == 1) last = static_cast<std::ptrdiff_t>(c);
  if (last < 0) return g.lower()[0];
  const double x = g.center(static_cast<std::size_t>(last))[0];
  return x + 0.5 * g.spacing();
}

}  // namespace detail

inline void run_minimize(PipelineResult& res, const RunOptions& opt) {
  const auto& spec = *res.plan.spec;
  MinimizeOptions mo = res.plan.minimize;
  mo.workers = opt.workers;
  res.minimized = minimize(spec, std::nullopt, mo, res.plan.seeds);
  const auto& m = *res.minimized;
  const std::filesystem::path out(opt.out_dir);
  if (spec.grid->dim() <= 2) export_raster(m.w, (out / "partition.pgm").string());
  for (int i = 1; i <= spec.num_phases; ++i) {
    const std::string stem = "u_" + std::to_string(i);
    detail::write_file(out / (stem + ".txt"), [&](std::ostream& os) { write_field(os, m.u[i - 1]); });
    if (spec.grid->dim() <= 2) export_raster(m.u[i - 1], (out / (stem + ".pgm")).string());
  }
  detail::write_file(out / "solve_report.csv",
                     [&](std::ostream& os) { write_solve_report_csv(os, m.report); });
  const Terms t = terms(m.u, m.w, spec);
  auto& s = res.summary;
  s.add("J", t.total());
  s.add("energy", t.energy);
  s.add("mass", t.mass);
  s.add("volume_term", t.volume);
  s.add("iterations", m.report.iterations);
  s.add("converged", m.report.converged);
  s.add("rejected_batches", m.report.rejected_batches);
  for (std::size_t i = 0; i < m.report.final_volumes.size(); ++i)
    s.add("volume_" + std::to_string(i + 1), m.report.final_volumes[i]);
  const long black = static_cast<long>(m.w.count(0)) -
                     static_cast<long>(spec.grid->size() - spec.grid->mask_count());
  s.add("black_zone_cells", black);
  s.add("partition_empty", black == static_cast<long>(spec.grid->mask_count()));
  s.add("zero_set_fraction", m.report.zero_set_fraction);
  s.add("lipschitz", lipschitz_estimate(m.u));
  double umax = 0.0;
  for (const auto& ui : m.u.u) umax = std::max(umax, ui.max_abs());
  s.add("max_abs_u", umax);
  double worst_step = 0.0;
  for (std::size_t k = 1; k < m.report.j_history.size(); ++k)
    worst_step = std::max(worst_step, m.report.j_history[k] - m.report.j_history[k - 1]);
  s.add("max_j_increase", worst_step);
}

inline void run_diagnose(PipelineResult& res, const RunOptions& opt, std::mt19937_64& rng) {
  const auto& spec = *res.plan.spec;
  const auto& m = *res.minimized;
  const Grid& g = *spec.grid;
  const int dim = g.dim();
  const double h = g.spacing();
  const std::filesystem::path out(opt.out_dir);
  const std::filesystem::path prof = out / "profiles";
  std::filesystem::create_directories(prof);
  auto& s = res.summary;
  const auto& plan = res.plan;

  // Two-phase interface probes: phases 1 and 2 (positive parts).
  if (spec.num_phases >= 2 && plan.interface_count > 0) {
    const double margin = std::max(plan.profile_radii.back(), plan.fit_radius) + 2.0 * h;
    const auto pts = detail::pick(g, interface_points(m.u, {1, 1}, {2, 1}), plan.interface_count,
                                  margin, rng);
    double worst_violation = 0.0, worst_el = 0.0;
    long skipped = 0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      InterfaceProbe p;
      p.x0 = pts[k];
      RadialProfile energy;
      try {
        p.acf = acf_product(m.u, {1, 1}, {2, 1}, p.x0, plan.profile_radii);
        p.el = el_interface_check(m.u, m.w, spec, p.x0, plan.fit_radius);
        p.beta = flatness(m.u, {1, 1}, Phase{2, 1}, p.x0, plan.profile_radii).beta;
        energy = radial_energy(m.u, p.x0, plan.profile_radii);
      } catch (const PreconditionError&) {
        ++skipped;
        continue;
      }
      const std::string tag = std::to_string(res.interface_probes.size());
      detail::write_file(prof / ("acf_product_" + tag + ".csv"),
                         [&](std::ostream& os) { write_profile_csv(os, p.acf.profile); });
      detail::write_file(prof / ("flatness_" + tag + ".csv"),
                         [&](std::ostream& os) { write_profile_csv(os, p.beta); });
      detail::write_file(prof / ("energy_" + tag + ".csv"),
                         [&](std::ostream& os) { write_profile_csv(os, energy); });
      worst_violation = std::max(worst_violation, p.acf.violation);
      worst_el = std::max(worst_el, p.el.residual);
      res.interface_probes.push_back(std::move(p));
    }
    detail::write_file(out / "interface.csv", [&](std::ostream& os) {
      os << "probe,x0,acf_violation,a1,a2,slope_target,el_residual\n";
      for (std::size_t k = 0; k < res.interface_probes.size(); ++k) {
        const auto& p = res.interface_probes[k];
        os << k << ',' << detail::point_text(p.x0, dim) << ',' << format_double(p.acf.violation)
           << ',' << format_double(p.el.a1) << ',' << format_double(p.el.a2) << ','
           << format_double(p.el.target) << ',' << format_double(p.el.residual) << '\n';
      }
    });
    s.add("interface_probes", static_cast<long>(res.interface_probes.size()));
    s.add("interface_probes_skipped", skipped);
    if (!res.interface_probes.empty()) {
      s.add("acf_violation_max", worst_violation);
      s.add("acf_monotone", worst_violation <= plan.tol_mono);
      s.add("el_residual_max", worst_el);
    }
  }

  // One-phase free-boundary probes, every phase.
  if (plan.fb_count > 0) {
    std::vector<std::pair<int, Point>> fb;
    for (int i = 1; i <= spec.num_phases; ++i)
      for (const auto& x : free_boundary_points(m.u, {i, 1})) fb.emplace_back(i, x);
    std::vector<Point> all;
    for (const auto& [i, x] : fb) all.push_back(x);
    const auto picked = detail::pick(g, all, plan.fb_count, 2.0 * h, rng);
    long fb_skipped = 0, fb_used = 0;
    for (std::size_t k = 0; k < picked.size(); ++k) {
      int phase = 1;
      for (const auto& [i, x] : fb)
        if (x == picked[k]) {
          phase = i;
          break;
        }
      std::vector<DensityProbe> rows;
      RadialProfile weiss;
      try {
        const auto mu = interface_measure(m.u, spec, phase, picked[k], plan.density_radii);
        for (std::size_t j = 0; j < plan.density_radii.size(); ++j) {
          const double r = plan.density_radii[j];
          rows.push_back({picked[k], phase, r, density_report(m.u, phase, picked[k], r), mu.mu_density[j]});
        }
        const double lambda = volume_marginal(m.w, spec.volume_term, picked[k])
                                  .lambda[static_cast<std::size_t>(phase - 1)];
        weiss = weiss_profile(m.u, phase, lambda, picked[k], plan.profile_radii);
      } catch (const PreconditionError&) {
        ++fb_skipped;
        continue;
      }
      res.density_probes.insert(res.density_probes.end(), rows.begin(), rows.end());
      detail::write_file(prof / ("weiss_" + std::to_string(fb_used++) + ".csv"),
                         [&](std::ostream& os) { write_profile_csv(os, weiss); });
    }
    detail::write_file(out / "density.csv", [&](std::ostream& os) {
      os << "x0,phase,r,mean_square,positive_volume,interior,complement,mu_density\n";
      for (const auto& d : res.density_probes)
        os << detail::point_text(d.x0, dim) << ',' << d.phase << ',' << format_double(d.r) << ','
           << format_double(d.report.mean_square) << ',' << format_double(d.report.positive_volume)
           << ',' << format_double(d.report.interior) << ',' << format_double(d.report.complement)
           << ',' << format_double(d.mu_density) << '\n';
    });
    if (!res.density_probes.empty()) {
      double f[4] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                     std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
      double mu_lo = std::numeric_limits<double>::infinity(), mu_hi = 0.0;
      for (const auto& d : res.density_probes) {
        f[0] = std::min(f[0], d.report.mean_square);
        f[1] = std::min(f[1], d.report.positive_volume);
        f[2] = std::min(f[2], d.report.interior);
        f[3] = std::min(f[3], d.report.complement);
        mu_lo = std::min(mu_lo, d.mu_density);
        mu_hi = std::max(mu_hi, d.mu_density);
      }
      s.add("density_probes", fb_used);
      s.add("density_probes_skipped", fb_skipped);
      s.add("floor_mean_square", f[0]);
      s.add("floor_positive_volume", f[1]);
      s.add("floor_interior", f[2]);
      s.add("floor_complement", f[3]);
      s.add("mu_density_min", mu_lo);
      s.add("mu_density_max", mu_hi);
    }
  }

  // Phase count at every domain cell, split by distance to the boundary.
  if (dim <= 2 && g.size() <= 300000) {
    int interior = 0, boundary = 0;
    const Point lo = g.lower(), hi = g.upper();
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (!g.in_mask(c)) continue;
      const Point x = g.center(c);
      double db = std::numeric_limits<double>::infinity();
      for (int d = 0; d < dim; ++d) db = std::min({db, x[d] - lo[d], hi[d] - x[d]});
      bool near_outside = false;
      g.for_each_neighbor(c, [&](std::size_t nb) { near_outside = near_outside || !g.in_mask(nb); });
      const int k = phase_count_at(m.u, spec.sign, x, 4.0 * h);
      if (db <= 2.0 * h + 1e-12 * h || near_outside)
        boundary = std::max(boundary, k);
      else
        interior = std::max(interior, k);
    }
    res.phase_count_interior = interior;
    res.phase_count_boundary = boundary;
    s.add("phase_count_interior_max", interior);
    s.add("phase_count_boundary_max", boundary);
  }
}

/// Seeded balls B(x0, r), r in [r_min, r_max], kept 2h inside the box.
inline std::vector<Probe> random_probes(const Grid& g, int count, double r_min, double r_max,
                                        std::mt19937_64& rng) {
  std::vector<Probe> out;
  const Point lo = g.lower(), hi = g.upper();
  for (int k = 0; k < count; ++k) {
    Probe p;
    p.r = r_min + (r_max - r_min) * detail::unit(rng);
    const double margin = p.r + 2.0 * g.spacing();
    for (int d = 0; d < g.dim(); ++d) {
      const double a = lo[d] + margin, b = hi[d] - margin;
      p.x0[d] = b > a ? a + (b - a) * detail::unit(rng) : 0.5 * (lo[d] + hi[d]);
    }
    out.push_back(p);
  }
  return out;
}

inline void run_audit(PipelineResult& res, const RunOptions& opt, std::mt19937_64& rng) {
  const auto& spec = *res.plan.spec;
  const auto& m = *res.minimized;
  const auto probes =
      random_probes(*spec.grid, res.plan.audit_count, res.plan.audit_r_min, res.plan.audit_r_max, rng);
  res.audit = audit(m.u, m.w, spec, probes);
  detail::write_file(std::filesystem::path(opt.out_dir) / "audit.csv",
                     [&](std::ostream& os) { write_audit_csv(os, *res.audit); });
  const double j = total(m.u, m.w, spec);
  res.summary.add("audit_probes", static_cast<long>(probes.size()));
  res.summary.add("audit_min_delta_j", res.audit->min_delta_j);
  res.summary.add("audit_tolerance", 1e-3 * (1.0 + std::abs(j)));
  res.summary.add("audit_skipped", static_cast<long>(res.audit->notes.size()));
}

inline void run_oracle(PipelineResult& res, const RunOptions& opt) {
  const auto& plan = res.plan;
  const auto& spec = *plan.spec;
  const auto& m = *res.minimized;
  const auto lambda = std::get<PowerLaw>(spec.volume_term).a;
  std::vector<double> g1(static_cast<std::size_t>(plan.oracle_samples) + 1), g2(g1.size());
  for (std::size_t k = 0; k < g1.size(); ++k) {
    Point x{};
    x[0] = static_cast<double>(k) / static_cast<double>(plan.oracle_samples);
    g1[k] = plan.g_coeffs[0](x, 1);
    g2[k] = plan.g_coeffs[1](x, 1);
  }
  OracleComparison cmp;
  cmp.scan = oracle::two_phase_1d(g1, g2, lambda, lambda, plan.oracle_s_grid);
  cmp.interface_location = detail::interface_location_1d(m.w);
  cmp.interface_distance = std::numeric_limits<double>::infinity();
  for (double s : cmp.scan.s_ties)
    cmp.interface_distance = std::min(cmp.interface_distance, std::abs(s - cmp.interface_location));
  if (cmp.scan.s_ties.empty()) cmp.interface_distance = 0.0;
  cmp.gap = std::abs(total(m.u, m.w, spec) - cmp.scan.j_star);
  detail::write_file(std::filesystem::path(opt.out_dir) / "oracle_scan.csv",
                     [&](std::ostream& os) { oracle::write_scan_csv(os, cmp.scan); });
  auto& s = res.summary;
  s.add("oracle_kind", cmp.scan.kind);
  s.add("oracle_s_star", cmp.scan.s_star);
  std::string ties;
  for (double t : cmp.scan.s_ties) ties += (ties.empty() ? "" : " ") + format_double(t);
  s.add("oracle_argmin_set", ties.empty() ? std::string("none") : ties);
  s.add("oracle_j_star", cmp.scan.j_star);
  s.add("interface_location", cmp.interface_location);
  s.add("interface_distance", cmp.interface_distance);
  s.add("oracle_gap", cmp.gap);
  res.oracle = std::move(cmp);
}

/// Runs every stage of `plan` in the order landscape, minimize, diagnose,
/// audit, oracle and writes summary.txt last. A failing stage is recorded
/// in the summary and rethrown.
inline PipelineResult run_pipeline(RunPlan plan, const RunOptions& opt) {
  PipelineResult res;
  res.plan = std::move(plan);
  const std::filesystem::path out(opt.out_dir);
  std::filesystem::create_directories(out);
  std::mt19937_64 rng(opt.seed);
  auto& s = res.summary;
  const Grid& g = *res.plan.grid;
  s.add("dim", g.dim());
  s.add("spacing", g.spacing());
  s.add("cells", static_cast<long>(g.mask_count()));
  std::string stage = "setup";
  try {
    if (res.plan.has_stage("landscape")) {
      stage = "landscape";
      SolveStats stats;
      res.landscape = solve_landscape(res.plan.grid, *res.plan.potential, res.plan.minimize.tol_solve, &stats);
      detail::write_file(out / "landscape.txt", [&](std::ostream& os) { write_field(os, *res.landscape); });
      if (g.dim() <= 2) export_raster(*res.landscape, (out / "landscape.pgm").string());
      s.add("landscape_max", res.landscape->max_value());
      s.add("landscape_iterations", stats.iterations);
    }
    if (res.plan.has_stage("minimize")) {
      stage = "minimize";
      run_minimize(res, opt);
    }
    if (res.plan.has_stage("diagnose")) {
      stage = "diagnose";
      run_diagnose(res, opt, rng);
    }
    if (res.plan.has_stage("audit")) {
      stage = "audit";
      run_audit(res, opt, rng);
    }
    if (res.plan.has_stage("oracle")) {
      stage = "oracle";
      run_oracle(res, opt);
    }
  } catch (const Error& e) {
    s.add("failed_stage", stage);
    s.add("error", std::string(e.what()));
    s.add("note", std::string("artifacts are partial"));
    detail::write_file(out / "summary.txt", [&](std::ostream& os) { s.write(os); });
    throw;
  }
  detail::write_file(out / "summary.txt", [&](std::ostream& os) { s.write(os); });
  return res;
}

inline PipelineResult run_pipeline(const Config& cfg, const RunOptions& opt) {
  return run_pipeline(make_plan(cfg), opt);
}

}  // namespace mfb
