#pragma once

// The multi-phase functional J(u, W) = E(u) + M(u) + F(W): admissible
// pairs, the three terms, and the marginal volume costs lambda_i.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mfb/field_io.hpp"
#include "mfb/grid.hpp"

namespace mfb {

enum class SignConstraint { nonnegative, free };

/// F(W) = sum_i a |W_i| + b |W_i|^(1 + alpha).
struct PowerLaw {
  double a = 0.0;
  double b = 0.0;
  double alpha = 1.0;
};

/// F(W) = sum_i integral over W_i of q_i.
struct PerRegion {
  std::vector<ScalarField> q;
};

using VolumeTerm = std::variant<PowerLaw, PerRegion>;

struct FunctionalSpec {
  GridPtr grid;
  int num_phases = 1;
  std::vector<ScalarField> f;  // reaction coefficients, >= 0
  std::vector<ScalarField> g;  // sources
  std::vector<SignConstraint> sign;
  VolumeTerm volume_term = PowerLaw{};

  /// N phases with constant coefficients and no sign constraint.
  static FunctionalSpec uniform(GridPtr grid, int n, double f, double g,
                                VolumeTerm vt = PowerLaw{},
                                SignConstraint sc = SignConstraint::nonnegative) {
    FunctionalSpec s;
    s.grid = grid;
    s.num_phases = n;
    for (int i = 0; i < n; ++i) {
      s.f.push_back(ScalarField::constant(grid, f));
      s.g.push_back(ScalarField::constant(grid, g));
      s.sign.push_back(sc);
    }
    s.volume_term = std::move(vt);
    s.validate();
    return s;
  }

  void validate() const {
    if (!grid) throw PreconditionError("functional spec needs a grid");
    if (num_phases < 1) throw PreconditionError("functional spec needs at least one phase");
    const auto n = static_cast<std::size_t>(num_phases);
    if (f.size() != n || g.size() != n || sign.size() != n)
      throw PreconditionError("functional spec needs f, g and a sign constraint per phase");
    for (std::size_t i = 0; i < n; ++i) {
      f[i].validate();
      g[i].validate();
      if (f[i].min_value() < 0.0) throw PreconditionError("reaction coefficient f_i must be >= 0");
    }
    if (const auto* p = std::get_if<PowerLaw>(&volume_term)) {
      if (!std::isfinite(p->a) || !std::isfinite(p->b) || !std::isfinite(p->alpha))
        throw PreconditionError("power-law parameters must be finite");
      if (p->a < 0.0 || p->b < 0.0) throw PreconditionError("power-law a and b must be >= 0");
      if (!(p->alpha > 0.0)) throw PreconditionError("power-law alpha must be > 0");
    } else {
      const auto& q = std::get<PerRegion>(volume_term).q;
      if (q.size() != n) throw PreconditionError("per-region volume term needs one q_i per phase");
      for (const auto& qi : q) qi.validate();
    }
  }
};

/// Per-cell label: 0 is the black zone, 1..N name the regions W_i.
class Partition {
 public:
  Partition() = default;
  Partition(GridPtr grid, int num_phases)
      : grid_(std::move(grid)), num_phases_(num_phases), labels_(grid_->size(), 0) {}
  Partition(GridPtr grid, int num_phases, std::vector<int> labels)
      : grid_(std::move(grid)), num_phases_(num_phases), labels_(std::move(labels)) {
    if (labels_.size() != grid_->size()) throw PreconditionError("label count does not match grid");
    validate();
  }

  const Grid& grid() const noexcept { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  int num_phases() const noexcept { return num_phases_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int operator[](std::size_t c) const noexcept { return labels_[c]; }
  int& operator[](std::size_t c) noexcept { return labels_[c]; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  void validate() const {
    for (std::size_t c = 0; c < labels_.size(); ++c) {
      if (labels_[c] < 0 || labels_[c] > num_phases_)
        throw AdmissibilityError("partition label out of range");
      if (labels_[c] != 0 && !grid_->in_mask(c))
        throw AdmissibilityError("partition labels a cell outside the domain");
    }
  }

  std::size_t count(int label) const noexcept {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
  }

  /// |W_i| = (number of cells labeled i) * h^n, for i = 1..N (index i-1).
  std::vector<double> volumes() const {
    std::vector<std::size_t> n(static_cast<std::size_t>(num_phases_), 0);
    for (int l : labels_)
      if (l > 0) ++n[static_cast<std::size_t>(l - 1)];
    std::vector<double> v(n.size());
    const double cell = grid_->cell_volume();
    for (std::size_t i = 0; i < n.size(); ++i) v[i] = static_cast<double>(n[i]) * cell;
    return v;
  }

  /// 0/1 indicator of W_i.
  std::vector<std::uint8_t> region(int label) const {
    std::vector<std::uint8_t> r(labels_.size());
    for (std::size_t c = 0; c < labels_.size(); ++c) r[c] = labels_[c] == label ? 1 : 0;
    return r;
  }

  bool operator==(const Partition& o) const noexcept {
    return num_phases_ == o.num_phases_ && labels_ == o.labels_;
  }

 private:
  GridPtr grid_;
  int num_phases_ = 0;
  std::vector<int> labels_;
};

/// u = (u_1, ..., u_N); component i-1 holds u_i.
struct PhaseField {
  std::vector<ScalarField> u;

  static PhaseField zeros(const GridPtr& grid, int n) {
    PhaseField p;
    for (int i = 0; i < n; ++i) p.u.emplace_back(grid);
    return p;
  }

  int num_phases() const noexcept { return static_cast<int>(u.size()); }
  const Grid& grid() const { return u.front().grid(); }
  const GridPtr& grid_ptr() const { return u.front().grid_ptr(); }
  ScalarField& operator[](int i) { return u[static_cast<std::size_t>(i)]; }
  const ScalarField& operator[](int i) const { return u[static_cast<std::size_t>(i)]; }
};

/// Throws AdmissibilityError unless u_i vanishes off W_i and respects the
/// per-phase sign constraint.
inline void check_admissible(const PhaseField& u, const Partition& w, const FunctionalSpec& spec) {
  if (u.num_phases() != spec.num_phases || w.num_phases() != spec.num_phases)
    throw AdmissibilityError("phase count mismatch between fields, partition and spec");
  w.validate();
  for (int i = 0; i < spec.num_phases; ++i) {
    const auto& ui = u[i];
    const bool nonneg = spec.sign[static_cast<std::size_t>(i)] == SignConstraint::nonnegative;
    for (std::size_t c = 0; c < ui.size(); ++c) {
      if (ui[c] != 0.0 && w[c] != i + 1)
        throw AdmissibilityError("u_" + std::to_string(i + 1) + " is nonzero outside W_" +
                                 std::to_string(i + 1));
      if (nonneg && ui[c] < 0.0)
        throw AdmissibilityError("u_" + std::to_string(i + 1) + " violates its sign constraint");
    }
  }
}

/// E(u) = sum_i gradient_energy(u_i).
inline double energy(const PhaseField& u) {
  double e = 0.0;
  for (const auto& ui : u.u) e += gradient_energy(ui);
  return e;
}

/// M(u) = sum_i sum_cells (u_i^2 f_i - u_i g_i) h^n.
inline double mass_term(const PhaseField& u, const FunctionalSpec& spec) {
  const double cell = spec.grid->cell_volume();
  double m = 0.0;
  for (int i = 0; i < u.num_phases(); ++i) {
    const auto& ui = u[i];
    const auto& fi = spec.f[static_cast<std::size_t>(i)];
    const auto& gi = spec.g[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < ui.size(); ++c) m += ui[c] * ui[c] * fi[c] - ui[c] * gi[c];
  }
  return m * cell;
}

inline double power_law_value(const PowerLaw& p, const std::vector<double>& volumes) {
  double v = 0.0;
  for (double vol : volumes) v += p.a * vol + p.b * std::pow(vol, 1.0 + p.alpha);
  return v;
}

inline double volume_value(const Partition& w, const VolumeTerm& vt) {
  if (const auto* p = std::get_if<PowerLaw>(&vt)) return power_law_value(*p, w.volumes());
  const auto& q = std::get<PerRegion>(vt).q;
  double v = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c)
    if (w[c] > 0) v += q[static_cast<std::size_t>(w[c] - 1)][c];
  return v * w.grid().cell_volume();
}

struct Terms {
  double energy = 0.0;
  double mass = 0.0;
  double volume = 0.0;
  double total() const noexcept { return energy + mass + volume; }
};

inline Terms terms(const PhaseField& u, const Partition& w, const FunctionalSpec& spec) {
  check_admissible(u, w, spec);
  return {energy(u), mass_term(u, spec), volume_value(w, spec.volume_term)};
}

/// J(u, W); rejects non-admissible pairs.
inline double total(const PhaseField& u, const Partition& w, const FunctionalSpec& spec) {
  return terms(u, w, spec).total();
}

struct MarginalCosts {
  std::vector<double> lambda;    // lambda_i at index i-1
  std::vector<double> valid_at;  // volumes they were computed at
};

/// lambda_i = dF/d|W_i|. PowerLaw: a + b (1 + alpha) |W_i|^alpha. PerRegion:
/// q_i at the cell nearest to `at` (required).
inline MarginalCosts volume_marginal(const Partition& w, const VolumeTerm& vt,
                                     std::optional<Point> at = std::nullopt) {
  MarginalCosts m;
  m.valid_at = w.volumes();
  if (const auto* p = std::get_if<PowerLaw>(&vt)) {
    for (double vol : m.valid_at) m.lambda.push_back(p->a + p->b * (1.0 + p->alpha) * std::pow(vol, p->alpha));
    return m;
  }
  if (!at) throw PreconditionError("per-region marginal cost needs an evaluation point");
  const auto& q = std::get<PerRegion>(vt).q;
  const std::size_t c = w.grid().nearest_cell(*at);
  for (const auto& qi : q) m.lambda.push_back(qi[c]);
  return m;
}

/// Partition raster: gray = floor(255 * label / N).
inline Graymap partition_graymap(const Partition& w) {
  return make_graymap(w.grid(), [&](std::size_t c) {
    return static_cast<std::uint8_t>((255 * w[c]) / w.num_phases());
  });
}

inline void export_raster(const Partition& w, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_pgm(os, partition_graymap(w));
}

}  // namespace mfb
