#include "stgd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stgd {

namespace {

constexpr double kClipEps = 1e-12;

// Signed distance of p left of the directed edge a->b (positive = inside
// for a CCW polygon).
inline double edge_side(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline Vec2 intersect_segment_line(const Vec2& p, const Vec2& q, const Vec2& a,
                                   const Vec2& b) {
  double dp = edge_side(a, b, p);
  double dq = edge_side(a, b, q);
  double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

inline double z_overlap(const BevBox3D& a, const BevBox3D& b) {
  double lo = std::max(a.z - a.h * 0.5, b.z - b.h * 0.5);
  double hi = std::min(a.z + a.h * 0.5, b.z + b.h * 0.5);
  return std::max(0.0, hi - lo);
}

// Clipping order affects the last few bits; order the pair canonically so
// the IoU family is exactly symmetric under argument swap.
inline bool box_less(const BevBox3D& a, const BevBox3D& b) {
  auto ta = a.as_array();
  auto tb = b.as_array();
  return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
}

inline double footprint_intersection(const BevBox3D& a, const BevBox3D& b) {
  const BevBox3D& first = box_less(b, a) ? b : a;
  const BevBox3D& second = box_less(b, a) ? a : b;
  return intersection_area(bev_corners(first), bev_corners(second));
}

}  // namespace

BevBox3D::BevBox3D(double x_, double y_, double z_, double l_, double w_,
                   double h_, double heading_)
    : x(x_), y(y_), z(z_), l(l_), w(w_), h(h_), heading(normalize_angle(heading_)) {
  require(std::isfinite(x) && std::isfinite(y) && std::isfinite(z) &&
              std::isfinite(l) && std::isfinite(w) && std::isfinite(h) &&
              std::isfinite(heading_),
          "BevBox3D: all fields must be finite");
  require(l > 0 && w > 0 && h > 0, "BevBox3D: extents must be positive");
}

double polygon_area(const ConvexPolygon2D& poly) {
  const auto& v = poly.vertices;
  if (v.size() < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2& p = v[i];
    const Vec2& q = v[(i + 1) % v.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

ConvexPolygon2D bev_corners(const BevBox3D& box) {
  double c = std::cos(box.heading);
  double s = std::sin(box.heading);
  double hl = box.l * 0.5;
  double hw = box.w * 0.5;
  // CCW in local frame: (+,+), (-,+), (-,-), (+,-)
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  ConvexPolygon2D poly;
  poly.vertices.resize(4);
  for (int i = 0; i < 4; ++i) {
    poly.vertices[i] = {box.x + c * lx[i] - s * ly[i],
                        box.y + s * lx[i] + c * ly[i]};
  }
  return poly;
}

double intersection_area(const ConvexPolygon2D& a, const ConvexPolygon2D& b) {
  if (a.vertices.size() < 3 || b.vertices.size() < 3) return 0.0;
  std::vector<Vec2> cur = a.vertices;
  std::vector<Vec2> next;
  next.reserve(cur.size() + b.vertices.size());
  for (std::size_t e = 0; e < b.vertices.size() && !cur.empty(); ++e) {
    const Vec2& ca = b.vertices[e];
    const Vec2& cb = b.vertices[(e + 1) % b.vertices.size()];
    next.clear();
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const Vec2& p = cur[i];
      const Vec2& q = cur[(i + 1) % cur.size()];
      double dp = edge_side(ca, cb, p);
      double dq = edge_side(ca, cb, q);
      if (dp >= -kClipEps) {
        next.push_back(p);
        if (dq < -kClipEps) next.push_back(intersect_segment_line(p, q, ca, cb));
      } else if (dq >= -kClipEps) {
        next.push_back(intersect_segment_line(p, q, ca, cb));
      }
    }
    cur.swap(next);
  }
  if (cur.size() < 3) return 0.0;
  ConvexPolygon2D clipped{std::move(cur)};
  return std::max(0.0, polygon_area(clipped));
}

double iou_bev(const BevBox3D& a, const BevBox3D& b) {
  double inter = footprint_intersection(a, b);
  double uni = a.footprint_area() + b.footprint_area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const BevBox3D& a, const BevBox3D& b) {
  double dz = z_overlap(a, b);
  if (dz <= 0.0) return 0.0;
  double inter = footprint_intersection(a, b) * dz;
  double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double giou_3d(const BevBox3D& a, const BevBox3D& b) {
  double dz = z_overlap(a, b);
  double inter = dz > 0.0 ? footprint_intersection(a, b) * dz : 0.0;
  double uni = a.volume() + b.volume() - inter;

  double min_x = std::numeric_limits<double>::infinity();
  double max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (const BevBox3D* box : {&a, &b}) {
    for (const Vec2& v : bev_corners(*box).vertices) {
      min_x = std::min(min_x, v.x);
      max_x = std::max(max_x, v.x);
      min_y = std::min(min_y, v.y);
      max_y = std::max(max_y, v.y);
    }
  }
  double min_z = std::min(a.z - a.h * 0.5, b.z - b.h * 0.5);
  double max_z = std::max(a.z + a.h * 0.5, b.z + b.h * 0.5);
  double enclosing = (max_x - min_x) * (max_y - min_y) * (max_z - min_z);
  if (enclosing <= 0.0) return iou_3d(a, b);

  double iou = uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
  return iou - (enclosing - uni) / enclosing;
}

double center_distance_bev(const BevBox3D& a, const BevBox3D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace stgd
