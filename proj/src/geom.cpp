// SPDX-License-Identifier: Apache-2.0

#include "rt/geom.hpp"

#include <algorithm>
#include <cmath>

namespace rt {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kRad2Deg = 180.0 / kPi;
}  // namespace

Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    if (n < kEps) throw std::invalid_argument("cannot normalize zero-length vector");
    return v / n;
}

Vec2 project(const Vec3& p, PlaneTag plane) {
    switch (plane) {
        case PlaneTag::XY: return {p.x, p.y};
        case PlaneTag::YZ: return {p.y, p.z};
        case PlaneTag::XZ: return {p.x, p.z};
    }
    throw std::logic_error("bad plane tag");
}

Vec3 lift(const Vec2& q, PlaneTag plane, double dropped) {
    switch (plane) {
        case PlaneTag::XY: return {q.x, q.y, dropped};
        case PlaneTag::YZ: return {dropped, q.x, q.y};
        case PlaneTag::XZ: return {q.x, dropped, q.y};
    }
    throw std::logic_error("bad plane tag");
}

const char* plane_name(PlaneTag plane) {
    switch (plane) {
        case PlaneTag::XY: return "xy";
        case PlaneTag::YZ: return "yz";
        case PlaneTag::XZ: return "xz";
    }
    return "?";
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
    const double na = norm(a), nb = norm(b);
    if (na < kEps || nb < kEps)
        throw std::invalid_argument("angle between zero-length vectors is undefined");
    const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    return std::acos(c) * kRad2Deg;
}

double angle_between_deg(const Vec2& a, const Vec2& b) {
    const double na = norm(a), nb = norm(b);
    if (na < kEps || nb < kEps)
        throw std::invalid_argument("angle between zero-length vectors is undefined");
    const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
    return std::acos(c) * kRad2Deg;
}

double oriented_angle_deg(const Vec2& d, const Vec2& n, const Vec2& v) {
    if (norm(d) < kEps || norm(v) < kEps)
        throw std::invalid_argument("oriented angle needs non-zero vectors");
    // Positive rotation from d towards n.
    const double s = cross(d, n) >= 0.0 ? 1.0 : -1.0;
    double a = std::atan2(s * cross(d, v), dot(d, v)) * kRad2Deg;
    if (a < 0.0) a += 360.0;
    if (a >= 360.0) a -= 360.0;
    return a;
}

double clamp_visibility_angle(double angle_deg) {
    return angle_deg < 180.0 ? angle_deg : 0.0;
}

Line2 Line2::from_points(const Vec2& a, const Vec2& b) {
    Line2 l;
    l.p0_ = a;
    const Vec2 d = b - a;
    if (norm(d) < kEps) throw std::invalid_argument("line through coincident points");
    l.dir_ = d * (1.0 / norm(d));
    l.vertical_ = std::abs(l.dir_.x) < kEps;
    return l;
}

Line2 Line2::from_slope_intercept(double m, double n) {
    Line2 l;
    l.p0_ = {0.0, n};
    const double inv = 1.0 / std::sqrt(1.0 + m * m);
    l.dir_ = {inv, m * inv};
    l.vertical_ = false;
    return l;
}

double Line2::slope() const {
    if (vertical_) throw std::domain_error("vertical line has no finite slope");
    return dir_.y / dir_.x;
}

double Line2::intercept() const {
    if (vertical_) throw std::domain_error("vertical line has no intercept");
    return p0_.y - slope() * p0_.x;
}

Vec2 line_intersection_2d(const Line2& a, const Line2& b) {
    if (!a.is_vertical() && !b.is_vertical()) {
        const double mv = a.slope(), nv = a.intercept();
        const double ma = b.slope(), na = b.intercept();
        if (std::abs(ma - mv) < kEpsAng) throw std::domain_error("parallel lines do not intersect");
        return {(nv - na) / (ma - mv), (ma * nv - mv * na) / (ma - mv)};
    }
    // Parametric fallback once a vertical line is involved.
    const double denom = cross(a.direction(), b.direction());
    if (std::abs(denom) < kEps) throw std::domain_error("parallel lines do not intersect");
    const double t = cross(b.point() - a.point(), b.direction()) / denom;
    return a.point() + a.direction() * t;
}

Vec3 mirror_point(const Vec3& p, const Plane& plane) {
    return p - plane.normal * (2.0 * plane.signed_distance(p));
}

ConvexPolygon ConvexPolygon::from_points(std::vector<Vec3> pts) {
    if (pts.size() < 3) throw std::invalid_argument("polygon needs at least three vertices");
    Vec3 n{0, 0, 0};  // Newell's method
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec3& a = pts[i];
        const Vec3& b = pts[(i + 1) % pts.size()];
        n.x += (a.y - b.y) * (a.z + b.z);
        n.y += (a.z - b.z) * (a.x + b.x);
        n.z += (a.x - b.x) * (a.y + b.y);
    }
    ConvexPolygon poly;
    poly.normal = normalized(n);
    poly.pts = std::move(pts);
    return poly;
}

Vec3 ConvexPolygon::centroid() const {
    Vec3 c{0, 0, 0};
    for (const Vec3& p : pts) c = c + p;
    return c / static_cast<double>(pts.size());
}

double ConvexPolygon::area() const {
    Vec3 s{0, 0, 0};
    for (size_t i = 1; i + 1 < pts.size(); ++i)
        s = s + cross(pts[i] - pts[0], pts[i + 1] - pts[0]);
    return 0.5 * norm(s);
}

bool ConvexPolygon::contains(const Vec3& p, double eps) const {
    if (std::abs(plane().signed_distance(p)) > eps) return false;
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec3& a = pts[i];
        const Vec3& b = pts[(i + 1) % pts.size()];
        const Vec3 edge = b - a;
        const double len = norm(edge);
        if (len < kEps) continue;
        const Vec3 inward = cross(normal, edge) / len;
        if (dot(p - a, inward) < -eps) return false;
    }
    return true;
}

std::optional<Vec3> segment_face_intersection(const Vec3& a, const Vec3& b,
                                              const ConvexPolygon& poly) {
    const Plane pl = poly.plane();
    const double da = pl.signed_distance(a);
    const double db = pl.signed_distance(b);
    if (std::abs(da) <= kEps || std::abs(db) <= kEps) return std::nullopt;
    if (da * db > 0.0) return std::nullopt;
    const double t = da / (da - db);
    const Vec3 p = a + (b - a) * t;
    if (poly.contains(p)) return p;
    return std::nullopt;
}

std::optional<std::pair<double, Vec3>> segment_plane_crossing(const Vec3& a, const Vec3& b,
                                                              const Plane& plane) {
    const double da = plane.signed_distance(a);
    const double db = plane.signed_distance(b);
    if (da * db >= 0.0) return std::nullopt;
    const double t = da / (da - db);
    return std::make_pair(t, a + (b - a) * t);
}

std::vector<Vec3> clip_polygon_halfspace(const std::vector<Vec3>& poly, const Plane& plane) {
    std::vector<Vec3> out;
    const size_t n = poly.size();
    if (n == 0) return out;
    out.reserve(n + 2);
    for (size_t i = 0; i < n; ++i) {
        const Vec3& a = poly[i];
        const Vec3& b = poly[(i + 1) % n];
        const double da = plane.signed_distance(a);
        const double db = plane.signed_distance(b);
        if (da >= -kEps) out.push_back(a);
        if ((da > kEps && db < -kEps) || (da < -kEps && db > kEps))
            out.push_back(a + (b - a) * (da / (da - db)));
    }
    if (out.size() < 3) out.clear();
    return out;
}

PlaneFrame PlaneFrame::from_plane(const Plane& plane) {
    PlaneFrame f;
    f.origin = plane.point;
    f.normal = plane.normal;
    const Vec3 axis = std::abs(plane.normal.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    f.u = normalized(cross(plane.normal, axis));
    f.v = cross(plane.normal, f.u);
    return f;
}

std::vector<Vec2> convex_hull_2d(std::vector<Vec2> pts) {
    if (pts.size() < 3) return pts;
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) {
                              return std::abs(a.x - b.x) < kEps && std::abs(a.y - b.y) < kEps;
                          }),
              pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Vec2> hull(2 * pts.size());
    size_t k = 0;
    for (size_t i = 0; i < pts.size(); ++i) {  // lower
        while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {  // upper
        while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

namespace {
bool axis_separates(const std::vector<Vec2>& a, const std::vector<Vec2>& b, const Vec2& axis,
                    double eps) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const Vec2& p : a) {
        const double d = dot(p, axis);
        amin = std::min(amin, d);
        amax = std::max(amax, d);
    }
    for (const Vec2& p : b) {
        const double d = dot(p, axis);
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
    }
    return amax < bmin - eps || bmax < amin - eps;
}

bool separating_axis(const std::vector<Vec2>& a, const std::vector<Vec2>& b, double eps) {
    for (size_t i = 0; i < a.size(); ++i) {
        const Vec2 e = a[(i + 1) % a.size()] - a[i];
        const double len = norm(e);
        if (len <= 1e-12) continue;
        // Test the edge normal and the edge direction. The direction axis is
        // what separates collinear degenerate hulls sharing a carrier line.
        if (axis_separates(a, b, {-e.y / len, e.x / len}, eps)) return true;
        if (axis_separates(a, b, {e.x / len, e.y / len}, eps)) return true;
    }
    return false;
}

bool has_finite_edge(const std::vector<Vec2>& poly) {
    for (size_t i = 0; i < poly.size(); ++i) {
        if (norm(poly[(i + 1) % poly.size()] - poly[i]) > 1e-12) return true;
    }
    return false;
}
}  // namespace

bool convex_polygons_overlap_2d(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                                double eps) {
    if (a.empty() || b.empty()) return false;
    if (separating_axis(a, b, eps) || separating_axis(b, a, eps)) return false;
    if (!has_finite_edge(a) && !has_finite_edge(b)) {
        return norm(a.front() - b.front()) <= eps;  // both hulls are points
    }
    return true;
}

std::vector<Vec2> hull_plane_slice(const std::vector<Vec3>& points, const Plane& plane,
                                   const PlaneFrame& frame) {
    std::vector<Vec2> section;
    std::vector<double> d(points.size());
    for (size_t i = 0; i < points.size(); ++i) d[i] = plane.signed_distance(points[i]);
    for (size_t i = 0; i < points.size(); ++i) {
        if (std::abs(d[i]) <= kEps) section.push_back(frame.to2d(points[i]));
        for (size_t j = i + 1; j < points.size(); ++j) {
            if ((d[i] > kEps && d[j] < -kEps) || (d[i] < -kEps && d[j] > kEps)) {
                const double t = d[i] / (d[i] - d[j]);
                section.push_back(frame.to2d(points[i] + (points[j] - points[i]) * t));
            }
        }
    }
    return convex_hull_2d(std::move(section));
}

}  // namespace rt
