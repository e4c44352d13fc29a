#include "phcp/percept/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "phcp/common/error.hpp"

namespace phcp {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

void validate_box(const ObjectBox& b) {
  const bool finite = std::isfinite(b.center_x) && std::isfinite(b.center_y) &&
                      std::isfinite(b.length) && std::isfinite(b.width) && std::isfinite(b.yaw);
  if (!finite) throw ShapeError("box has non-finite fields");
  if (!(b.length > 0.0) || !(b.width > 0.0))
    throw ShapeError("degenerate box: length and width must be positive");
}

std::array<Vec2, 4> box_corners(const ObjectBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec2 ax{c * b.length * 0.5, s * b.length * 0.5};
  const Vec2 ay{-s * b.width * 0.5, c * b.width * 0.5};
  const Vec2 ctr{b.center_x, b.center_y};
  return {ctr + ax * 1.0 + ay * -1.0, ctr + ax + ay, ctr + ax * -1.0 + ay, ctr + ax * -1.0 + ay * -1.0};
}

bool box_contains(const ObjectBox& b, Vec2 p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x - b.center_x, dy = p.y - b.center_y;
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return std::abs(u) <= b.length * 0.5 && std::abs(v) <= b.width * 0.5;
}

Vec2 to_local(const Pose& f, Vec2 g) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  const double dx = g.x - f.x, dy = g.y - f.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 to_global(const Pose& f, Vec2 l) {
  const double c = std::cos(f.yaw), s = std::sin(f.yaw);
  return {f.x + c * l.x - s * l.y, f.y + s * l.x + c * l.y};
}

ObjectBox box_to_local(const Pose& f, const ObjectBox& g) {
  const auto p = to_local(f, {g.center_x, g.center_y});
  return {p.x, p.y, g.length, g.width, wrap_angle(g.yaw - f.yaw)};
}

ObjectBox box_to_global(const Pose& f, const ObjectBox& l) {
  const auto p = to_global(f, {l.center_x, l.center_y});
  return {p.x, p.y, l.length, l.width, wrap_angle(l.yaw + f.yaw)};
}

double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) a += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * a;
}

std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject, const std::vector<Vec2>& clip) {
  std::vector<Vec2> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2 p = in[i], q = in[(i + 1) % in.size()];
      const double sp = cross(edge, p - a), sq = cross(edge, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + (q - p) * t);
      }
    }
  }
  return out;
}

double rotated_iou(const ObjectBox& a, const ObjectBox& b) {
  validate_box(a);
  validate_box(b);
  const double area_a = a.length * a.width, area_b = b.length * b.width;
  // Quick reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.length, a.width), rb = 0.5 * std::hypot(b.length, b.width);
  if (std::hypot(a.center_x - b.center_x, a.center_y - b.center_y) >= ra + rb) return 0.0;

  const auto ca = box_corners(a), cb = box_corners(b);
  const std::vector<Vec2> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  const double inter = std::max(0.0, polygon_area(clip_convex(pa, pb)));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace phcp
