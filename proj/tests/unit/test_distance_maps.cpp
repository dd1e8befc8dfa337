#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "focalseg/distance_maps.hpp"
#include "oracles.hpp"

using namespace focalseg;

namespace {

BinaryMask mask_from(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> v) {
  return BinaryMask(Grid2D<std::uint8_t>(rows, cols, std::move(v)));
}

}  // namespace

TEST_CASE("single foreground pixel at the centre of a 3x3 mask") {
  const auto m = mask_from(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  const auto d = distance_transform(m).grid;
  const double s2 = std::sqrt(2.0);
  const double expected[9] = {s2, 1, s2, 1, 0, 1, s2, 1, s2};
  for (std::size_t i = 0; i < 9; ++i) CHECK(d[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  CHECK(boundary_pixels(m).count() == 1);
}

TEST_CASE("1x4 strip and its DPT") {
  const auto m = mask_from(1, 4, {0, 1, 1, 0});
  const auto d = distance_transform(m);
  CHECK(d.grid.values()[0] == 1.0);
  CHECK(d.grid.values()[1] == 0.0);
  CHECK(d.grid.values()[2] == 0.0);
  CHECK(d.grid.values()[3] == 1.0);
  const auto w = distance_penalty(d);
  CHECK(w.kind == WeightKind::DPT);
  const double expected[4] = {1.0, 2.0, 2.0, 1.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.grid[i] == expected[i]);
}

TEST_CASE("DPT endpoints and monotonicity") {
  DistanceMap d{Grid2D<double>(2, 3, 0.0)};
  d.grid(1, 2) = 4.0;
  d.grid(0, 1) = 1.5;
  const auto w = distance_penalty(d);
  CHECK(w.grid(1, 2) == 1.0);
  CHECK(w.grid(0, 0) == 2.0);
  CHECK(w.grid(0, 1) > w.grid(1, 2));
  CHECK(w.grid(0, 1) < w.grid(0, 0));
}

TEST_CASE("degenerate distance map yields uniform 2") {
  DistanceMap d{Grid2D<double>(2, 2, 0.0)};
  const auto w = distance_penalty(d);
  for (double v : w.grid.values()) CHECK(v == 2.0);
}

TEST_CASE("masks without a boundary are rejected") {
  CHECK_THROWS_AS(distance_transform(BinaryMask(4, 4)), Error);
  try {
    distance_transform(BinaryMask(4, 4).inverted());
    FAIL("expected NoBoundary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoBoundary);
  }
}

TEST_CASE("exact agreement with brute force on random masks") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> side(1, 24);
  std::uniform_real_distribution<double> dens(0.05, 0.95);
  for (int t = 0; t < 200; ++t) {
    std::size_t r = side(rng), c = side(rng);
    if (r * c < 2) c = 2;
    const auto m = oracle::random_mask(rng, r, c, dens(rng));
    const auto fast = squared_distance_transform(m);
    const auto slow = oracle::brute_force_sq_distance(m);
    REQUIRE(fast == slow);
    // boundary pixels are zero, others positive
    const auto b = boundary_pixels(m);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK((fast[i] == 0.0) == (b[i] == 1));
  }
}

TEST_CASE("distance map is 1-Lipschitz") {
  std::mt19937_64 rng(5);
  const auto m = oracle::random_mask(rng, 20, 17, 0.3);
  const auto d = distance_transform(m).grid;
  std::uniform_int_distribution<std::size_t> rr(0, 19), cc(0, 16);
  for (int k = 0; k < 2000; ++k) {
    const std::size_t r1 = rr(rng), c1 = cc(rng), r2 = rr(rng), c2 = cc(rng);
    const double dist = std::hypot(double(r1) - double(r2), double(c1) - double(c2));
    CHECK(std::abs(d(r1, c1) - d(r2, c2)) <= dist + 1e-12);
  }
}

TEST_CASE("FDPT endpoints and focal ordering") {
  std::mt19937_64 rng(3);
  const auto m = oracle::random_mask(rng, 16, 16, 0.2);
  const auto dpt = distance_penalty(distance_transform(m));

  const auto zero = focal_distance_penalty(dpt, 0.0);
  CHECK(zero.kind == WeightKind::FDPT);
  for (double v : zero.grid.values()) CHECK(v == 1.0);

  const auto one = focal_distance_penalty(dpt, 1.0);
  CHECK(one.grid == dpt.grid);

  WeightMap two{Grid2D<double>(1, 1, 2.0), WeightKind::DPT, 1.0};
  CHECK(focal_distance_penalty(two, 10.0).grid[0] == 1024.0);

  double prev = 0.0;
  for (double e : {0.0, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    const auto w = focal_distance_penalty(dpt, e);
    for (std::size_t i = 0; i < w.grid.size(); ++i) {
      const double lower = focal_distance_penalty(dpt, e * 0.5).grid[i];
      if (dpt.grid[i] > 1.0 && e > 0.0) CHECK(w.grid[i] > lower);
      if (dpt.grid[i] == 1.0) CHECK(w.grid[i] == 1.0);
    }
    CHECK(w.grid(0, 0) >= prev);
    prev = w.grid(0, 0);
  }
}

TEST_CASE("FDPT rejects invalid epsilon and non-DPT input") {
  WeightMap dpt{Grid2D<double>(2, 2, 1.5), WeightKind::DPT, 1.0};
  CHECK_THROWS_AS(focal_distance_penalty(dpt, -0.1), Error);
  CHECK_THROWS_AS(focal_distance_penalty(dpt, std::nan("")), Error);
  CHECK_THROWS_AS(focal_distance_penalty(dpt, INFINITY), Error);
  auto f = focal_distance_penalty(dpt, 2.0);
  CHECK_THROWS_AS(focal_distance_penalty(f, 2.0), Error);
}

TEST_CASE("per-class weight maps") {
  const auto fg = mask_from(1, 4, {0, 1, 1, 0});
  const std::vector<BinaryMask> classes{fg.inverted(), fg};
  const auto maps = class_weight_maps(classes, 1.0);
  REQUIRE(maps.size() == 2);
  CHECK(maps[1].grid[1] == 2.0);
  // a class covering nothing has no boundary and gets uniform weight
  const std::vector<BinaryMask> absent{BinaryMask(2, 2).inverted(), BinaryMask(2, 2)};
  for (const auto& w : class_weight_maps(absent, 0.1))
    for (double v : w.grid.values()) CHECK(v == 1.0);
}

TEST_CASE("normalised intensity and heatmap output") {
  Grid2D<double> g(1, 3, std::vector<double>{1.0, 1.5, 2.0});
  const auto n = normalized_intensity(g);
  CHECK(n[0] == 0);
  CHECK(n[2] == 255);
  const auto flat = normalized_intensity(Grid2D<double>(2, 2, 3.0));
  for (auto v : flat.values()) CHECK(v == 0);

  const auto dir = std::filesystem::temp_directory_path() / "focalseg_heatmap_test";
  std::filesystem::remove_all(dir);
  render_heatmap(WeightMap{g, WeightKind::DPT, 1.0}, dir / "h.png");
  CHECK(std::filesystem::file_size(dir / "h.png") > 0);
  std::filesystem::remove_all(dir);
}
