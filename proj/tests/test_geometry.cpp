#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stgd/geometry.hpp"

using namespace stgd;

namespace {

BevBox3D random_box(Rng& rng, double span = 10.0) {
  return BevBox3D(rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-1, 1),
                  rng.uniform(1.0, 4.5), rng.uniform(0.8, 2.5), rng.uniform(1.0, 2.0),
                  rng.uniform(-kPi, kPi));
}

ConvexPolygon2D unit_square_at(double cx, double cy) {
  return ConvexPolygon2D{{{cx + 0.5, cy + 0.5}, {cx - 0.5, cy + 0.5},
                          {cx - 0.5, cy - 0.5}, {cx + 0.5, cy - 0.5}}};
}

}  // namespace

TEST_CASE("box construction normalizes heading and validates extents") {
  BevBox3D b(0, 0, 0, 1, 1, 1, 3 * kPi);
  CHECK(b.heading == doctest::Approx(kPi).epsilon(1e-12));
  BevBox3D c(0, 0, 0, 1, 1, 1, -kPi);  // -pi aliases to +pi
  CHECK(c.heading == doctest::Approx(kPi).epsilon(1e-12));
  CHECK_THROWS_AS(BevBox3D(0, 0, 0, -1, 1, 1, 0), ValidationError);
  CHECK_THROWS_AS(BevBox3D(0, 0, 0, 1, 1, 1, std::nan("")), ValidationError);
}

TEST_CASE("bev_corners axis-aligned unit box") {
  auto poly = bev_corners(BevBox3D(0, 0, 0, 1, 1, 1, 0));
  REQUIRE(poly.vertices.size() == 4);
  for (const auto& v : poly.vertices) {
    CHECK(std::abs(v.x) == doctest::Approx(0.5));
    CHECK(std::abs(v.y) == doctest::Approx(0.5));
  }
  CHECK(polygon_area(poly) == doctest::Approx(1.0));
}

TEST_CASE("bev_corners heading pi/2 swaps footprint extents") {
  auto poly = bev_corners(BevBox3D(0, 0, 0, 4, 2, 1, kPi / 2));
  double max_x = 0, max_y = 0;
  for (const auto& v : poly.vertices) {
    max_x = std::max(max_x, std::abs(v.x));
    max_y = std::max(max_y, std::abs(v.y));
  }
  CHECK(max_x == doctest::Approx(1.0));
  CHECK(max_y == doctest::Approx(2.0));
}

TEST_CASE("bev_corners heading pi/4 puts unit-square vertices on the axes") {
  auto poly = bev_corners(BevBox3D(0, 0, 0, 1, 1, 1, kPi / 4));
  // corner (0.5, 0.5) rotated by 45 degrees lands at distance sqrt(2)/2 on an axis
  double r = std::sqrt(2.0) / 2.0;
  for (const auto& v : poly.vertices) {
    CHECK(std::hypot(v.x, v.y) == doctest::Approx(r));
    CHECK(std::min(std::abs(v.x), std::abs(v.y)) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("intersection_area basics") {
  CHECK(intersection_area(unit_square_at(0, 0), unit_square_at(5, 5)) == 0.0);
  CHECK(intersection_area(unit_square_at(0, 0), unit_square_at(0, 0)) == doctest::Approx(1.0));
  CHECK(intersection_area(unit_square_at(0, 0), unit_square_at(0.5, 0)) == doctest::Approx(0.5));
  // symmetric in arguments
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    auto a = bev_corners(random_box(rng, 2.0));
    auto b = bev_corners(random_box(rng, 2.0));
    CHECK(intersection_area(a, b) == doctest::Approx(intersection_area(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("iou_bev trivial values") {
  BevBox3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(iou_bev(a, a) == doctest::Approx(1.0));
  BevBox3D b(0.5, 0, 0, 1, 1, 1, 0);
  CHECK(iou_bev(a, b) == doctest::Approx(1.0 / 3.0));
  BevBox3D far(10, 10, 0, 1, 1, 1, 0);
  CHECK(iou_bev(a, far) == 0.0);
}

TEST_CASE("iou_bev 30-degree rotation matches the point-sampling oracle") {
  BevBox3D a(0, 0, 0, 1, 1, 1, 0);
  BevBox3D b(0, 0, 0, 1, 1, 1, kPi / 6);
  double mc = oracles::mc_iou_points(a, b, 1000000, 424242);
  CHECK(iou_bev(a, b) == doctest::Approx(mc).epsilon(1e-3));
}

TEST_CASE("iou_bev matches scanline Monte-Carlo on random pairs") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    BevBox3D a = random_box(rng, 2.0);
    BevBox3D b = random_box(rng, 2.0);
    double mc = oracles::mc_iou_scanline(a, b, 4096, 1000 + static_cast<std::uint64_t>(i));
    CHECK(std::abs(iou_bev(a, b) - mc) < 2e-3);
  }
}

TEST_CASE("iou_bev symmetry and rigid-transform invariance") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    BevBox3D a = random_box(rng, 3.0);
    BevBox3D b = random_box(rng, 3.0);
    CHECK(iou_bev(a, b) == iou_bev(b, a));

    double dx = rng.uniform(-5, 5), dy = rng.uniform(-5, 5), rot = rng.uniform(-kPi, kPi);
    double c = std::cos(rot), s = std::sin(rot);
    auto moved = [&](const BevBox3D& x) {
      return BevBox3D(c * x.x - s * x.y + dx, s * x.x + c * x.y + dy, x.z, x.l, x.w, x.h,
                      x.heading + rot);
    };
    CHECK(std::abs(iou_bev(moved(a), moved(b)) - iou_bev(a, b)) < 1e-9);
  }
}

TEST_CASE("iou_3d trivial values") {
  BevBox3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(iou_3d(a, a) == doctest::Approx(1.0));
  BevBox3D above(0, 0, 5, 1, 1, 1, 0);
  CHECK(iou_3d(a, above) == 0.0);
  BevBox3D half_up(0, 0, 0.5, 1, 1, 1, 0);  // shares half the height, full footprint
  CHECK(iou_3d(a, half_up) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("giou_3d values and bounds") {
  BevBox3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(giou_3d(a, a) == doctest::Approx(1.0));

  BevBox3D shifted(0.5, 0, 0, 1, 1, 1, 0);
  // IoU 1/3, enclosing 1.5x1x1, union 1.5 -> GIoU = 1/3
  CHECK(giou_3d(a, shifted) == doctest::Approx(1.0 / 3.0));

  double prev = 1.0;
  for (double d : {2.0, 5.0, 20.0, 100.0, 1000.0}) {
    double g = giou_3d(a, BevBox3D(d, 0, 0, 1, 1, 1, 0));
    CHECK(g < prev);
    prev = g;
  }
  CHECK(prev == doctest::Approx(-1.0).epsilon(1e-2));

  Rng rng(17);
  for (int i = 0; i < 300; ++i) {
    BevBox3D x = random_box(rng, 4.0);
    BevBox3D y = random_box(rng, 4.0);
    double g = giou_3d(x, y);
    CHECK(g == doctest::Approx(giou_3d(y, x)).epsilon(1e-12));
    CHECK(g <= iou_3d(x, y) + 1e-12);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
  }
}

TEST_CASE("center_distance_bev") {
  BevBox3D a(0, 0, 0, 1, 1, 1, 0);
  CHECK(center_distance_bev(a, a) == 0.0);
  BevBox3D b(3, 4, 2, 1, 1, 1, 1.0);
  CHECK(center_distance_bev(a, b) == doctest::Approx(5.0));
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    BevBox3D x = random_box(rng);
    BevBox3D y = random_box(rng);
    double want = std::sqrt((x.x - y.x) * (x.x - y.x) + (x.y - y.y) * (x.y - y.y));
    CHECK(center_distance_bev(x, y) == doctest::Approx(want).epsilon(1e-12));
  }
}
