#ifndef STGD_GEOMETRY_HPP
#define STGD_GEOMETRY_HPP

#include <array>
#include <vector>

#include "stgd/common.hpp"

namespace stgd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Oriented 3D box: center (x, y, z), extents (l, w, h), heading in (-pi, pi].
// `l` runs along the heading direction, `w` across it. Construction
// normalizes the heading and rejects non-positive or non-finite extents.
struct BevBox3D {
  double x, y, z;
  double l, w, h;
  double heading;

  BevBox3D() : x(0), y(0), z(0), l(1), w(1), h(1), heading(0) {}
  BevBox3D(double x_, double y_, double z_, double l_, double w_, double h_,
           double heading_);

  std::array<double, 7> as_array() const { return {x, y, z, l, w, h, heading}; }
  static BevBox3D from_array(const std::array<double, 7>& a) {
    return BevBox3D(a[0], a[1], a[2], a[3], a[4], a[5], a[6]);
  }

  double footprint_area() const { return l * w; }
  double volume() const { return l * w * h; }
};

// Counter-clockwise convex polygon with positive signed area.
struct ConvexPolygon2D {
  std::vector<Vec2> vertices;
};

double polygon_area(const ConvexPolygon2D& poly);

// 4 CCW corners of the heading-rotated l x w footprint.
ConvexPolygon2D bev_corners(const BevBox3D& box);

// Convex-convex intersection area (Sutherland-Hodgman clip + shoelace).
double intersection_area(const ConvexPolygon2D& a, const ConvexPolygon2D& b);

double iou_bev(const BevBox3D& a, const BevBox3D& b);
double iou_3d(const BevBox3D& a, const BevBox3D& b);

// 3D generalized IoU in (-1, 1]. The enclosing region is the smallest
// axis-aligned cuboid containing both rotated boxes.
double giou_3d(const BevBox3D& a, const BevBox3D& b);

double center_distance_bev(const BevBox3D& a, const BevBox3D& b);

}  // namespace stgd

#endif  // STGD_GEOMETRY_HPP
