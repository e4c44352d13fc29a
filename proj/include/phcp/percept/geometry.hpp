#pragma once

#include <array>
#include <vector>

namespace phcp {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

/// Planar rigid pose (meters, radians).
struct Pose {
  double x = 0.0, y = 0.0, yaw = 0.0;
};

/// Oriented BEV box. length runs along the heading, width across it.
struct ObjectBox {
  double center_x = 0.0, center_y = 0.0;
  double length = 1.0, width = 1.0;
  double yaw = 0.0;

  bool operator==(const ObjectBox&) const = default;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Throws ShapeError unless length > 0, width > 0 and all fields are finite.
void validate_box(const ObjectBox& box);

/// Corners in counter-clockwise order.
std::array<Vec2, 4> box_corners(const ObjectBox& box);
bool box_contains(const ObjectBox& box, Vec2 p);

Vec2 to_local(const Pose& frame, Vec2 global);
Vec2 to_global(const Pose& frame, Vec2 local);
ObjectBox box_to_local(const Pose& frame, const ObjectBox& global);
ObjectBox box_to_global(const Pose& frame, const ObjectBox& local);

/// Shoelace area of a simple polygon (positive for counter-clockwise).
double polygon_area(const std::vector<Vec2>& poly);

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject, const std::vector<Vec2>& clip);

/// Exact intersection-over-union of two oriented boxes via convex polygon
/// clipping. Throws ShapeError on degenerate (zero-area) boxes.
double rotated_iou(const ObjectBox& a, const ObjectBox& b);

}  // namespace phcp
