#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "mfb/field_io.hpp"
#include "mfb/functional.hpp"

using namespace mfb;

TEST(FieldIo, TextRoundTripIsBitExact) {
  const auto g = make_grid(Grid::box(2, 17, -0.3, 1.1));
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0.0, 1e3);
  const auto f = ScalarField::from_function(g, [&](const Point&) { return d(rng); });
  std::stringstream ss;
  write_field(ss, f);
  const auto back = read_field(ss, g);
  for (std::size_t c = 0; c < g->size(); ++c) EXPECT_EQ(back[c], f[c]);
}

TEST(FieldIo, GridRoundTripKeepsMask) {
  const Grid g = Grid::box(2, 9);
  std::stringstream ss;
  write_grid(ss, g);
  const Grid back = read_grid(ss);
  EXPECT_TRUE(back.same_geometry(g));
  for (std::size_t c = 0; c < g.size(); ++c) EXPECT_EQ(back.in_mask(c), g.in_mask(c));
}

TEST(FieldIo, HeaderMismatchRejected) {
  const auto a = make_grid(Grid::box(1, 8)), b = make_grid(Grid::box(1, 16));
  std::stringstream ss;
  write_field(ss, ScalarField(a));
  EXPECT_THROW(read_field(ss, b), Error);
}

TEST(FieldIo, MissingFileReported) {
  const auto g = make_grid(Grid::box(1, 8));
  EXPECT_THROW(load_field("/nonexistent/dir/f.txt", g), Error);
}

TEST(Raster, ConstantFieldIsUniform) {
  const auto g = make_grid(Grid::centered(2, 4, 0.1));
  const auto img = field_graymap(ScalarField::constant(g, 2.5));
  EXPECT_EQ(img.width, 8);
  EXPECT_EQ(std::set<std::uint8_t>(img.pixels.begin(), img.pixels.end()).size(), 1u);
}

TEST(Raster, HalfPlanePartitionHasStraightEdge) {
  const auto g = make_grid(Grid::centered(2, 64, 1.0 / 128));
  Partition w(g, 2);
  for (std::size_t c = 0; c < w.size(); ++c) w[c] = g->center(c)[0] < 0.0 ? 1 : 2;
  const auto img = partition_graymap(w);
  ASSERT_EQ(img.width, 128);
  ASSERT_EQ(img.height, 128);
  for (std::ptrdiff_t row = 0; row < img.height; ++row)
    for (std::ptrdiff_t col = 0; col < img.width; ++col)
      EXPECT_EQ(img.pixels[static_cast<std::size_t>(row * 128 + col)], col < 64 ? 127 : 255);
}

TEST(Raster, PgmRoundTripAndSidecar) {
  const auto g = make_grid(Grid::box(2, 6));
  const auto f = ScalarField::from_function(g, [](const Point& x) { return x[0] + 2.0 * x[1]; });
  const auto dir = std::filesystem::temp_directory_path() / "mfb_raster_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "f.pgm").string();
  export_raster(f, path);
  std::ifstream is(path);
  const auto img = read_pgm(is);
  const auto want = field_graymap(f);
  EXPECT_EQ(img.pixels, want.pixels);
  std::ifstream side(path + ".range");
  std::string key;
  double lo = 1, hi = 0;
  side >> key >> lo >> key >> hi;
  EXPECT_EQ(lo, f.min_value());
  EXPECT_EQ(hi, f.max_value());
  std::filesystem::remove_all(dir);
}
