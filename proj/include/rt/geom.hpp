// SPDX-License-Identifier: Apache-2.0

#ifndef RT_GEOM_HPP
#define RT_GEOM_HPP

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rt {

inline constexpr double kEps = 1e-9;          // metric tolerance, metres
inline constexpr double kEpsAng = 1e-9;       // angular tolerance, degrees
inline constexpr double kSpeedOfLight = 299792458.0;

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
Vec3 normalized(const Vec3& v);  // throws std::invalid_argument on zero vector

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& a) { return std::sqrt(dot(a, a)); }

/// Working plane of a 2D record. XY is the horizontal plane; YZ and XZ are the
/// vertical planes used for height relations.
enum class PlaneTag { XY, YZ, XZ };

Vec2 project(const Vec3& p, PlaneTag plane);
/// Directions project the same way as points: coordinate selection.
inline Vec2 project_direction(const Vec3& d, PlaneTag plane) { return project(d, plane); }
Vec3 lift(const Vec2& q, PlaneTag plane, double dropped);
const char* plane_name(PlaneTag plane);

/// Unoriented angle between two vectors in degrees, range [0, 180].
double angle_between_deg(const Vec3& a, const Vec3& b);
double angle_between_deg(const Vec2& a, const Vec2& b);

/// Oriented in-plane angle of v measured from direction d, opening towards n,
/// in degrees [0, 360). d and n must be non-parallel.
double oriented_angle_deg(const Vec2& d, const Vec2& n, const Vec2& v);

/// A visibility angle is kept as-is below 180 degrees and recorded as zero
/// otherwise (the back side of the record's reference line carries no rays).
double clamp_visibility_angle(double angle_deg);

/// 2D line with slope-intercept semantics and a parametric fallback so
/// vertical lines remain representable.
class Line2 {
  public:
    static Line2 from_points(const Vec2& a, const Vec2& b);
    static Line2 from_slope_intercept(double m, double n);

    bool is_vertical() const { return vertical_; }
    double slope() const;       // throws std::domain_error for vertical lines
    double intercept() const;   // throws std::domain_error for vertical lines
    const Vec2& point() const { return p0_; }
    const Vec2& direction() const { return dir_; }

  private:
    Vec2 p0_;
    Vec2 dir_;
    bool vertical_ = false;
};

/// Intersection point of two lines; throws std::domain_error when parallel.
Vec2 line_intersection_2d(const Line2& a, const Line2& b);

struct Plane {
    Vec3 point;
    Vec3 normal;  // unit length

    double signed_distance(const Vec3& p) const { return dot(p - point, normal); }
};

/// Mirror image of p across the plane. Involution: mirroring twice returns p.
Vec3 mirror_point(const Vec3& p, const Plane& plane);

/// Ordered, coplanar, convex vertex ring with an outward unit normal.
struct ConvexPolygon {
    std::vector<Vec3> pts;
    Vec3 normal;

    static ConvexPolygon from_points(std::vector<Vec3> pts);  // normal from winding

    Plane plane() const { return {pts.front(), normal}; }
    Vec3 centroid() const;
    double area() const;
    /// Closed containment: boundary points count as inside (within eps).
    bool contains(const Vec3& p, double eps = kEps) const;
};

/// Intersection of the open segment (a, b) with the polygon, for blockage
/// tests. Endpoints lying on the face plane do not count, so rays leaving or
/// arriving at a face are not blocked by it.
std::optional<Vec3> segment_face_intersection(const Vec3& a, const Vec3& b,
                                              const ConvexPolygon& poly);

/// Strict plane crossing of segment [a, b]: returns (t, point) with t in (0,1)
/// when the endpoints lie on opposite sides.
std::optional<std::pair<double, Vec3>> segment_plane_crossing(const Vec3& a, const Vec3& b,
                                                              const Plane& plane);

/// Clip a convex polygon against signed_distance >= 0; boundary kept.
std::vector<Vec3> clip_polygon_halfspace(const std::vector<Vec3>& poly, const Plane& plane);

/// Orthonormal in-plane coordinate frame.
struct PlaneFrame {
    Vec3 origin, u, v, normal;

    static PlaneFrame from_plane(const Plane& plane);
    Vec2 to2d(const Vec3& p) const { return {dot(p - origin, u), dot(p - origin, v)}; }
    Vec3 to3d(const Vec2& q) const { return origin + u * q.x + v * q.y; }
};

std::vector<Vec2> convex_hull_2d(std::vector<Vec2> pts);
/// Separating-axis overlap test for convex polygons; touching counts.
bool convex_polygons_overlap_2d(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                                double eps = kEps);

/// Cross-section of conv(points) with the plane, as a convex 2D polygon in the
/// given frame. Empty when the hull does not reach the plane.
std::vector<Vec2> hull_plane_slice(const std::vector<Vec3>& points, const Plane& plane,
                                   const PlaneFrame& frame);

}  // namespace rt

#endif
