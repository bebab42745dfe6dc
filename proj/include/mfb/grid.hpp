#pragma once

// Uniform node lattice geometry, scalar fields on it, and the finite
// difference stencils shared by every other module.
//
// Unknowns live on lattice nodes ("cells"). A cell takes part in the
// problem when its domain_mask entry is set; every other cell, and every
// ghost position beyond the bounding box, carries the value 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfb/error.hpp"

namespace mfb {

inline constexpr int kMaxDim = 3;

using Point = std::array<double, kMaxDim>;
using Index = std::array<std::ptrdiff_t, kMaxDim>;

inline double distance(const Point& a, const Point& b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return std::sqrt(s);
}

inline double dot(const Point& a, const Point& b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) s += a[d] * b[d];
  return s;
}

class Grid {
 public:
  Grid(int dim, std::vector<std::ptrdiff_t> shape, double spacing, Point origin,
       std::vector<std::uint8_t> mask)
      : dim_(dim), spacing_(spacing), origin_(origin), mask_(std::move(mask)) {
    if (dim < 1 || dim > kMaxDim)
      throw PreconditionError("grid dimension must be in [1, 3]");
    if (static_cast<int>(shape.size()) != dim)
      throw PreconditionError("grid shape must have one entry per axis");
    if (!(spacing > 0.0) || !std::isfinite(spacing))
      throw PreconditionError("grid spacing must be positive");
    shape_.fill(1);
    for (int d = 0; d < dim; ++d) {
      if (shape[d] < 3) throw PreconditionError("every grid axis needs at least 3 cells");
      shape_[d] = shape[d];
    }
    for (int d = dim; d < kMaxDim; ++d) origin_[d] = 0.0;
    // Row-major: the last axis varies fastest.
    stride_.fill(0);
    std::ptrdiff_t s = 1;
    for (int d = dim - 1; d >= 0; --d) {
      stride_[d] = s;
      s *= shape_[d];
    }
    size_ = static_cast<std::size_t>(s);
    if (mask_.size() != size_)
      throw PreconditionError("domain mask must have exactly one entry per cell");
    for (auto& m : mask_) m = m ? 1 : 0;
  }

  /// Open box (lo, hi)^dim resolved by `intervals` steps per axis. Nodes sit
  /// at lo + k h for k = 0..intervals; the boundary nodes are outside the mask
  /// so they realize the homogeneous Dirichlet condition on the box faces.
  static Grid box(int dim, std::ptrdiff_t intervals, double lo = 0.0, double hi = 1.0) {
    if (intervals < 2) throw PreconditionError("box grid needs at least 2 intervals");
    if (!(hi > lo)) throw PreconditionError("box grid needs hi > lo");
    const double h = (hi - lo) / static_cast<double>(intervals);
    std::vector<std::ptrdiff_t> shape(dim, intervals + 1);
    Point origin{};
    for (int d = 0; d < dim; ++d) origin[d] = lo;
    std::size_t n = 1;
    for (int d = 0; d < dim; ++d) n *= static_cast<std::size_t>(intervals + 1);
    std::vector<std::uint8_t> mask(n, 0);
    Grid g(dim, shape, h, origin, std::vector<std::uint8_t>(n, 1));
    for (std::size_t c = 0; c < n; ++c) {
      const Index idx = g.unflatten(c);
      bool interior = true;
      for (int d = 0; d < dim; ++d) interior = interior && idx[d] > 0 && idx[d] < intervals;
      mask[c] = interior ? 1 : 0;
    }
    return g.with_mask(std::move(mask));
  }

  /// Fully masked lattice symmetric about the origin with nodes at
  /// (k + 1/2) h, k = -half..half-1, on every axis. The origin falls strictly
  /// between nodes, which keeps hyperplanes through it off the lattice.
  static Grid centered(int dim, std::ptrdiff_t half, double spacing) {
    if (half < 2) throw PreconditionError("centered grid needs half >= 2");
    std::vector<std::ptrdiff_t> shape(dim, 2 * half);
    Point origin{};
    for (int d = 0; d < dim; ++d) origin[d] = -(static_cast<double>(half) - 0.5) * spacing;
    std::size_t n = 1;
    for (int d = 0; d < dim; ++d) n *= static_cast<std::size_t>(2 * half);
    return Grid(dim, shape, spacing, origin, std::vector<std::uint8_t>(n, 1));
  }

  Grid with_mask(std::vector<std::uint8_t> mask) const {
    return Grid(dim_, shape_vector(), spacing_, origin_, std::move(mask));
  }

  int dim() const noexcept { return dim_; }
  double spacing() const noexcept { return spacing_; }
  const Point& origin() const noexcept { return origin_; }
  std::size_t size() const noexcept { return size_; }
  std::ptrdiff_t extent(int d) const noexcept { return shape_[d]; }
  std::ptrdiff_t stride(int d) const noexcept { return stride_[d]; }
  std::vector<std::ptrdiff_t> shape_vector() const {
    return {shape_.begin(), shape_.begin() + dim_};
  }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }
  bool in_mask(std::size_t c) const noexcept { return mask_[c] != 0; }

  /// h^dim: the measure attached to one cell.
  double cell_volume() const noexcept { return std::pow(spacing_, dim_); }

  std::size_t mask_count() const noexcept {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
  }

  Index unflatten(std::size_t c) const noexcept {
    Index idx{};
    auto rem = static_cast<std::ptrdiff_t>(c);
    for (int d = 0; d < dim_; ++d) {
      idx[d] = rem / stride_[d];
      rem -= idx[d] * stride_[d];
    }
    return idx;
  }

  std::size_t flatten(const Index& idx) const noexcept {
    std::ptrdiff_t c = 0;
    for (int d = 0; d < dim_; ++d) c += idx[d] * stride_[d];
    return static_cast<std::size_t>(c);
  }

  bool contains_index(const Index& idx) const noexcept {
    for (int d = 0; d < dim_; ++d)
      if (idx[d] < 0 || idx[d] >= shape_[d]) return false;
    return true;
  }

  Point center(std::size_t c) const noexcept {
    const Index idx = unflatten(c);
    Point p{};
    for (int d = 0; d < dim_; ++d) p[d] = origin_[d] + spacing_ * static_cast<double>(idx[d]);
    return p;
  }

  Point lower() const noexcept { return origin_; }
  Point upper() const noexcept {
    Point p = origin_;
    for (int d = 0; d < dim_; ++d) p[d] += spacing_ * static_cast<double>(shape_[d] - 1);
    return p;
  }

  Point box_center() const noexcept {
    Point lo = lower(), hi = upper(), c{};
    for (int d = 0; d < dim_; ++d) c[d] = 0.5 * (lo[d] + hi[d]);
    return c;
  }

  bool in_bounding_box(const Point& x, double slack = 0.0) const noexcept {
    const Point hi = upper();
    for (int d = 0; d < dim_; ++d)
      if (x[d] < origin_[d] - slack || x[d] > hi[d] + slack) return false;
    return true;
  }

  /// Index of the node nearest to x, clamped into the bounding box.
  std::size_t nearest_cell(const Point& x) const noexcept {
    Index idx{};
    for (int d = 0; d < dim_; ++d) {
      auto k = static_cast<std::ptrdiff_t>(std::lround((x[d] - origin_[d]) / spacing_));
      idx[d] = std::clamp<std::ptrdiff_t>(k, 0, shape_[d] - 1);
    }
    return flatten(idx);
  }

  /// Calls fn(neighbor) for each of the up to 2*dim lattice neighbors of c
  /// that lie inside the bounding box.
  template <class Fn>
  void for_each_neighbor(std::size_t c, Fn&& fn) const {
    const Index idx = unflatten(c);
    for (int d = 0; d < dim_; ++d) {
      if (idx[d] > 0) fn(c - static_cast<std::size_t>(stride_[d]));
      if (idx[d] + 1 < shape_[d]) fn(c + static_cast<std::size_t>(stride_[d]));
    }
  }

  static constexpr std::size_t kGhost = static_cast<std::size_t>(-1);

  /// Visits every lattice edge as fn(a, b, axis). Edges reaching past the
  /// bounding box are reported with b == kGhost (value 0 by convention).
  template <class Fn>
  void for_each_edge(Fn&& fn) const {
    for (std::size_t c = 0; c < size_; ++c) {
      const Index idx = unflatten(c);
      for (int d = 0; d < dim_; ++d) {
        if (idx[d] == 0) fn(c, kGhost, d);
        if (idx[d] + 1 < shape_[d])
          fn(c, c + static_cast<std::size_t>(stride_[d]), d);
        else
          fn(c, kGhost, d);
      }
    }
  }

  bool same_geometry(const Grid& o) const noexcept {
    return dim_ == o.dim_ && shape_ == o.shape_ && spacing_ == o.spacing_ &&
           origin_ == o.origin_ && mask_ == o.mask_;
  }

 private:
  int dim_;
  std::array<std::ptrdiff_t, kMaxDim> shape_{};
  std::array<std::ptrdiff_t, kMaxDim> stride_{};
  std::size_t size_ = 0;
  double spacing_;
  Point origin_;
  std::vector<std::uint8_t> mask_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(Grid g) { return std::make_shared<const Grid>(std::move(g)); }

/// One value per cell, zero outside the domain mask.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(GridPtr grid) : grid_(std::move(grid)), values_(grid_->size(), 0.0) {}

  ScalarField(GridPtr grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->size())
      throw PreconditionError("field size does not match its grid");
    validate();
  }

  template <class Fn>
  static ScalarField from_function(GridPtr grid, Fn&& fn) {
    ScalarField out(grid);
    for (std::size_t c = 0; c < grid->size(); ++c)
      if (grid->in_mask(c)) out.values_[c] = fn(grid->center(c));
    out.validate();
    return out;
  }

  static ScalarField constant(GridPtr grid, double value) {
    return from_function(std::move(grid), [value](const Point&) { return value; });
  }

  const Grid& grid() const noexcept { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  bool empty() const noexcept { return !grid_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t c) const noexcept { return values_[c]; }
  double& operator[](std::size_t c) noexcept { return values_[c]; }

  /// Throws unless every value is finite and masked-out cells hold 0.
  void validate() const {
    for (std::size_t c = 0; c < values_.size(); ++c) {
      if (!std::isfinite(values_[c])) throw PreconditionError("field value is not finite");
      if (!grid_->in_mask(c) && values_[c] != 0.0)
        throw PreconditionError("field must vanish outside the domain mask");
    }
  }

  double max_value() const noexcept { return *std::max_element(values_.begin(), values_.end()); }
  double min_value() const noexcept { return *std::min_element(values_.begin(), values_.end()); }
  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

/// alpha * f + beta * g on a shared grid.
inline ScalarField axpby(double alpha, const ScalarField& f, double beta, const ScalarField& g) {
  ScalarField out(f.grid_ptr());
  for (std::size_t c = 0; c < f.size(); ++c) out[c] = alpha * f[c] + beta * g[c];
  return out;
}

/// Discrete Laplacian (sum of second differences / h^2) evaluated on the
/// mask. Out-of-mask and out-of-box neighbors contribute the value 0.
inline ScalarField laplacian_apply(const ScalarField& f) {
  const Grid& g = f.grid();
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  ScalarField out(f.grid_ptr());
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!g.in_mask(c)) continue;
    double acc = -2.0 * g.dim() * f[c];
    g.for_each_neighbor(c, [&](std::size_t nb) { acc += f[nb]; });
    out[c] = acc * inv_h2;
  }
  return out;
}

/// Sum over lattice edges of (forward difference)^2 * h^(n-2). When a
/// region is given, only edges with at least one endpoint in it count.
inline double gradient_energy(const ScalarField& f, std::span<const std::uint8_t> region = {}) {
  const Grid& g = f.grid();
  const double scale = std::pow(g.spacing(), g.dim() - 2);
  double acc = 0.0;
  const bool all = region.empty();
  g.for_each_edge([&](std::size_t a, std::size_t b, int) {
    const bool b_ghost = b == Grid::kGhost;
    if (!all && !region[a] && (b_ghost || !region[b])) return;
    const double diff = f[a] - (b_ghost ? 0.0 : f[b]);
    acc += diff * diff;
  });
  return acc * scale;
}

/// Bilinear form behind gradient_energy: sum over edges of the product of
/// the two fields' differences, times h^(n-2).
inline double gradient_pairing(const ScalarField& f, const ScalarField& q) {
  const Grid& g = f.grid();
  double acc = 0.0;
  g.for_each_edge([&](std::size_t a, std::size_t b, int) {
    const bool ghost = b == Grid::kGhost;
    acc += (f[a] - (ghost ? 0.0 : f[b])) * (q[a] - (ghost ? 0.0 : q[b]));
  });
  return acc * std::pow(g.spacing(), g.dim() - 2);
}

/// Cells whose centers lie strictly inside the open ball B(center, radius).
struct BallIndex {
  Point center{};
  double radius = 0.0;
  std::vector<std::size_t> cells;  // sorted, duplicate-free
};

inline BallIndex ball_cells(const Grid& g, const Point& x0, double r) {
  if (!(r > 0.0)) throw PreconditionError("ball radius must be positive");
  BallIndex ball{x0, r, {}};
  Index lo{}, hi{};
  for (int d = 0; d < g.dim(); ++d) {
    const double a = (x0[d] - r - g.origin()[d]) / g.spacing();
    const double b = (x0[d] + r - g.origin()[d]) / g.spacing();
    lo[d] = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(a)));
    hi[d] = std::min<std::ptrdiff_t>(g.extent(d) - 1, static_cast<std::ptrdiff_t>(std::ceil(b)));
    if (lo[d] > hi[d]) throw PreconditionError("ball contains no cell center");
  }
  // Odometer over the index box, last axis fastest, so cells come out sorted.
  Index idx = lo;
  while (true) {
    const std::size_t c = g.flatten(idx);
    if (distance(g.center(c), x0, g.dim()) < r) ball.cells.push_back(c);
    int d = g.dim() - 1;
    while (d >= 0) {
      if (++idx[d] <= hi[d]) break;
      idx[d] = lo[d];
      --d;
    }
    if (d < 0) break;
  }
  if (ball.cells.empty()) throw PreconditionError("ball contains no cell center");
  return ball;
}

/// Multilinear interpolation of f at x.
inline double sample(const ScalarField& f, const Point& x) {
  const Grid& g = f.grid();
  const double slack = 1e-12 * g.spacing();
  if (!g.in_bounding_box(x, slack)) throw PreconditionError("sample point outside bounding box");
  Index base{};
  std::array<double, kMaxDim> frac{};
  for (int d = 0; d < g.dim(); ++d) {
    double t = (x[d] - g.origin()[d]) / g.spacing();
    t = std::clamp(t, 0.0, static_cast<double>(g.extent(d) - 1));
    auto k = static_cast<std::ptrdiff_t>(std::floor(t));
    k = std::min<std::ptrdiff_t>(k, g.extent(d) - 2);
    base[d] = k;
    frac[d] = t - static_cast<double>(k);
  }
  double acc = 0.0;
  const int corners = 1 << g.dim();
  for (int m = 0; m < corners; ++m) {
    Index idx = base;
    double w = 1.0;
    for (int d = 0; d < g.dim(); ++d) {
      const bool up = (m >> d) & 1;
      idx[d] += up ? 1 : 0;
      w *= up ? frac[d] : 1.0 - frac[d];
    }
    if (w != 0.0) acc += w * f[g.flatten(idx)];
  }
  return acc;
}

}  // namespace mfb
