#pragma once

// Plain-text grid/field serialization and 8-bit graymap rasters.
//
// Text format:
//   dim <n>
//   shape <n0> ... <n_{dim-1}>
//   spacing <h>
//   origin <x0> ... <x_{dim-1}>
//   <values, row-major, one line per run of the last axis>
// Values use the shortest decimal form that round-trips bit-exactly.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mfb/grid.hpp"

namespace mfb {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void write_header(std::ostream& os, const Grid& g) {
  os << "dim " << g.dim() << "\nshape";
  for (int d = 0; d < g.dim(); ++d) os << ' ' << g.extent(d);
  os << "\nspacing " << format_double(g.spacing()) << "\norigin";
  for (int d = 0; d < g.dim(); ++d) os << ' ' << format_double(g.origin()[d]);
  os << '\n';
}

template <class Get>
void write_values(std::ostream& os, const Grid& g, Get&& get) {
  const auto run = static_cast<std::size_t>(g.extent(g.dim() - 1));
  for (std::size_t c = 0; c < g.size(); ++c) {
    os << get(c);
    os << ((c + 1) % run == 0 ? '\n' : ' ');
  }
}

struct Header {
  int dim = 0;
  std::vector<std::ptrdiff_t> shape;
  double spacing = 0.0;
  Point origin{};
};

inline void expect_token(std::istream& is, const char* want) {
  std::string tok;
  if (!(is >> tok) || tok != want)
    throw Error(std::string("field file: expected '") + want + "' but read '" + tok + "'");
}

inline double read_double(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw Error("field file: truncated value list");
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw Error("field file: bad number '" + tok + "'");
  return v;
}

inline Header read_header(std::istream& is) {
  Header h;
  expect_token(is, "dim");
  if (!(is >> h.dim) || h.dim < 1 || h.dim > kMaxDim) throw Error("field file: bad dim");
  expect_token(is, "shape");
  h.shape.resize(static_cast<std::size_t>(h.dim));
  for (auto& s : h.shape)
    if (!(is >> s)) throw Error("field file: bad shape");
  expect_token(is, "spacing");
  h.spacing = read_double(is);
  expect_token(is, "origin");
  for (int d = 0; d < h.dim; ++d) h.origin[d] = read_double(is);
  return h;
}

}  // namespace detail

inline void write_grid(std::ostream& os, const Grid& g) {
  detail::write_header(os, g);
  detail::write_values(os, g, [&](std::size_t c) { return g.in_mask(c) ? '1' : '0'; });
}

inline Grid read_grid(std::istream& is) {
  const auto h = detail::read_header(is);
  std::size_t n = 1;
  for (auto s : h.shape) n *= static_cast<std::size_t>(s);
  std::vector<std::uint8_t> mask(n);
  for (auto& m : mask) {
    const double v = detail::read_double(is);
    if (v != 0.0 && v != 1.0) throw Error("mask file: entries must be 0 or 1");
    m = v != 0.0 ? 1 : 0;
  }
  return Grid(h.dim, h.shape, h.spacing, h.origin, std::move(mask));
}

inline void write_field(std::ostream& os, const ScalarField& f) {
  detail::write_header(os, f.grid());
  detail::write_values(os, f.grid(), [&](std::size_t c) { return format_double(f[c]); });
}

/// Reads a field and checks that its header matches `grid`.
inline ScalarField read_field(std::istream& is, const GridPtr& grid) {
  const auto h = detail::read_header(is);
  bool match = h.dim == grid->dim() && h.spacing == grid->spacing();
  for (int d = 0; match && d < h.dim; ++d)
    match = h.shape[d] == grid->extent(d) && h.origin[d] == grid->origin()[d];
  if (!match) throw Error("field file header does not match the target grid");
  std::vector<double> values(grid->size());
  for (auto& v : values) v = detail::read_double(is);
  return ScalarField(grid, std::move(values));
}

inline void save_field(const std::string& path, const ScalarField& f) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_field(os, f);
  if (!os) throw Error("write to '" + path + "' failed");
}

inline ScalarField load_field(const std::string& path, const GridPtr& grid) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  return read_field(is, grid);
}

/// 8-bit graymap, ASCII (P2). In 2D, image rows run along axis 1 with the
/// largest axis-1 coordinate at the top; a 1D grid becomes a single row.
struct Graymap {
  std::ptrdiff_t width = 0;
  std::ptrdiff_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first
};

template <class Level>
Graymap make_graymap(const Grid& g, Level&& level) {
  if (g.dim() > 2) throw PreconditionError("graymap export supports dim <= 2");
  Graymap img;
  img.width = g.extent(0);
  img.height = g.dim() == 2 ? g.extent(1) : 1;
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  for (std::ptrdiff_t row = 0; row < img.height; ++row)
    for (std::ptrdiff_t col = 0; col < img.width; ++col) {
      Index idx{};
      idx[0] = col;
      if (g.dim() == 2) idx[1] = img.height - 1 - row;
      img.pixels[static_cast<std::size_t>(row * img.width + col)] = level(g.flatten(idx));
    }
  return img;
}

inline void write_pgm(std::ostream& os, const Graymap& img) {
  os << "P2\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::ptrdiff_t row = 0; row < img.height; ++row) {
    for (std::ptrdiff_t col = 0; col < img.width; ++col) {
      if (col) os << ' ';
      os << static_cast<int>(img.pixels[static_cast<std::size_t>(row * img.width + col)]);
    }
    os << '\n';
  }
}

inline Graymap read_pgm(std::istream& is) {
  detail::expect_token(is, "P2");
  Graymap img;
  int maxval = 0;
  if (!(is >> img.width >> img.height >> maxval) || maxval != 255)
    throw Error("graymap: unsupported header");
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  for (auto& p : img.pixels) {
    int v = 0;
    if (!(is >> v)) throw Error("graymap: truncated pixel data");
    p = static_cast<std::uint8_t>(v);
  }
  return img;
}

/// Linear map of [min, max] onto [0, 255]; a constant field maps to 0.
inline Graymap field_graymap(const ScalarField& f, double* lo_out = nullptr,
                             double* hi_out = nullptr) {
  const double lo = f.min_value(), hi = f.max_value();
  if (lo_out) *lo_out = lo;
  if (hi_out) *hi_out = hi;
  return make_graymap(f.grid(), [&](std::size_t c) -> std::uint8_t {
    if (!(hi > lo)) return 0;
    const double t = (f[c] - lo) / (hi - lo);
    return static_cast<std::uint8_t>(std::lround(255.0 * t));
  });
}

/// Writes `path` as a graymap and `path + ".range"` holding the value range.
inline void export_raster(const ScalarField& f, const std::string& path) {
  double lo = 0.0, hi = 0.0;
  const auto img = field_graymap(f, &lo, &hi);
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_pgm(os, img);
  std::ofstream side(path + ".range");
  if (!side) throw Error("cannot open '" + path + ".range' for writing");
  side << "min " << format_double(lo) << "\nmax " << format_double(hi) << '\n';
}

}  // namespace mfb
