#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "rt/geom.hpp"

using rt::Vec2;
using rt::Vec3;

namespace {

// Perpendicular distance from a point to a 2D line, used as the residual of an
// intersection result.
double line_residual(const rt::Line2& line, const Vec2& p) {
    const Vec2 d = line.direction();
    return std::abs(rt::cross(d, p - line.point())) / rt::norm(d);
}

Vec3 random_unit(std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        const Vec3 v{u(rng), u(rng), u(rng)};
        const double n = rt::norm(v);
        if (n > 0.1) return v * (1.0 / n);
    }
}

}  // namespace

TEST_SUITE("geom") {

TEST_CASE("vector arithmetic basics") {
    const Vec3 a{1.0, 2.0, 3.0};
    const Vec3 b{-4.0, 0.5, 2.0};
    CHECK(rt::dot(a, b) == doctest::Approx(3.0));
    const Vec3 c = rt::cross(a, b);
    CHECK(c.x == doctest::Approx(2.5));
    CHECK(c.y == doctest::Approx(-14.0));
    CHECK(c.z == doctest::Approx(8.5));
    CHECK(rt::norm(Vec3{3.0, 4.0, 0.0}) == doctest::Approx(5.0));
    CHECK(rt::distance(Vec3{1, 1, 1}, Vec3{1, 1, 4}) == doctest::Approx(3.0));
    // Cross product is perpendicular to both inputs.
    CHECK(std::abs(rt::dot(c, a)) < 1e-12);
    CHECK(std::abs(rt::dot(c, b)) < 1e-12);
}

TEST_CASE("normalized rejects the zero vector") {
    CHECK(rt::norm(rt::normalized(Vec3{0.0, 0.0, 5.0})) == doctest::Approx(1.0));
    CHECK_THROWS_AS(rt::normalized(Vec3{0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("projection onto coordinate planes and lifting back") {
    const Vec3 p{3.0, -2.0, 7.0};

    const Vec2 xy = rt::project(p, rt::PlaneTag::XY);
    CHECK(xy.x == doctest::Approx(3.0));
    CHECK(xy.y == doctest::Approx(-2.0));
    const Vec3 back_xy = rt::lift(xy, rt::PlaneTag::XY, 7.0);
    CHECK(rt::distance(back_xy, p) < 1e-15);

    const Vec2 yz = rt::project(p, rt::PlaneTag::YZ);
    CHECK(yz.x == doctest::Approx(-2.0));
    CHECK(yz.y == doctest::Approx(7.0));
    const Vec3 back_yz = rt::lift(yz, rt::PlaneTag::YZ, 3.0);
    CHECK(rt::distance(back_yz, p) < 1e-15);

    const Vec2 xz = rt::project(p, rt::PlaneTag::XZ);
    CHECK(xz.x == doctest::Approx(3.0));
    CHECK(xz.y == doctest::Approx(7.0));
    const Vec3 back_xz = rt::lift(xz, rt::PlaneTag::XZ, -2.0);
    CHECK(rt::distance(back_xz, p) < 1e-15);

    CHECK(std::string(rt::plane_name(rt::PlaneTag::XY)) == "xy");
    CHECK(std::string(rt::plane_name(rt::PlaneTag::YZ)) == "yz");
    CHECK(std::string(rt::plane_name(rt::PlaneTag::XZ)) == "xz");
}

TEST_CASE("angle between vectors in degrees") {
    CHECK(rt::angle_between_deg(Vec3{1, 0, 0}, Vec3{0, 1, 0}) == doctest::Approx(90.0));
    CHECK(rt::angle_between_deg(Vec3{1, 0, 0}, Vec3{2, 0, 0}) == doctest::Approx(0.0));
    CHECK(rt::angle_between_deg(Vec3{1, 0, 0}, Vec3{-3, 0, 0}) == doctest::Approx(180.0));
    CHECK(rt::angle_between_deg(Vec3{1, 1, 0}, Vec3{1, 0, 0}) == doctest::Approx(45.0));
    CHECK(rt::angle_between_deg(Vec2{1, 0}, Vec2{1, 1}) == doctest::Approx(45.0));
}

TEST_CASE("oriented angle sweeps a full turn from the reference direction") {
    const Vec2 d{1, 0};
    const Vec2 n{0, 1};
    CHECK(rt::oriented_angle_deg(d, n, Vec2{1, 0}) == doctest::Approx(0.0));
    CHECK(rt::oriented_angle_deg(d, n, Vec2{0, 1}) == doctest::Approx(90.0));
    CHECK(rt::oriented_angle_deg(d, n, Vec2{-1, 0}) == doctest::Approx(180.0));
    CHECK(rt::oriented_angle_deg(d, n, Vec2{0, -1}) == doctest::Approx(270.0));
    // Flipping the opening side mirrors the turn direction.
    CHECK(rt::oriented_angle_deg(d, Vec2{0, -1}, Vec2{0, -1}) == doctest::Approx(90.0));
}

TEST_CASE("visibility angles of 180 degrees or more are recorded as zero") {
    CHECK(rt::clamp_visibility_angle(90.0) == doctest::Approx(90.0));
    CHECK(rt::clamp_visibility_angle(179.5) == doctest::Approx(179.5));
    CHECK(rt::clamp_visibility_angle(180.0) == doctest::Approx(0.0));
    CHECK(rt::clamp_visibility_angle(250.0) == doctest::Approx(0.0));
    CHECK(rt::clamp_visibility_angle(0.0) == doctest::Approx(0.0));
}

TEST_CASE("visibility angle clamping is idempotent over random inputs") {
    std::mt19937 rng(7001);
    std::uniform_real_distribution<double> u(0.0, 360.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = u(rng);
        const double once = rt::clamp_visibility_angle(a);
        const double twice = rt::clamp_visibility_angle(once);
        CHECK(once == twice);
        CHECK(once >= 0.0);
        CHECK(once < 180.0);
    }
}

TEST_CASE("slope-intercept lines intersect where both equations hold") {
    // y = 5 meets y = x at (5, 5).
    const rt::Line2 horizontal = rt::Line2::from_slope_intercept(0.0, 5.0);
    const rt::Line2 diagonal = rt::Line2::from_slope_intercept(1.0, 0.0);
    const Vec2 m = rt::line_intersection_2d(horizontal, diagonal);
    CHECK(m.x == doctest::Approx(5.0));
    CHECK(m.y == doctest::Approx(5.0));
}

TEST_CASE("vertical lines are representable and intersect cleanly") {
    const rt::Line2 vertical = rt::Line2::from_points(Vec2{2, 0}, Vec2{2, 3});
    CHECK(vertical.is_vertical());
    CHECK_THROWS_AS(vertical.slope(), std::domain_error);
    CHECK_THROWS_AS(vertical.intercept(), std::domain_error);

    const rt::Line2 slanted = rt::Line2::from_slope_intercept(2.0, -1.0);
    CHECK_FALSE(slanted.is_vertical());
    CHECK(slanted.slope() == doctest::Approx(2.0));
    CHECK(slanted.intercept() == doctest::Approx(-1.0));

    const Vec2 m = rt::line_intersection_2d(vertical, slanted);
    CHECK(m.x == doctest::Approx(2.0));
    CHECK(m.y == doctest::Approx(3.0));
}

TEST_CASE("parallel lines have no intersection point") {
    const rt::Line2 a = rt::Line2::from_slope_intercept(1.5, 0.0);
    const rt::Line2 b = rt::Line2::from_slope_intercept(1.5, 2.0);
    CHECK_THROWS_AS(rt::line_intersection_2d(a, b), std::domain_error);
    const rt::Line2 v1 = rt::Line2::from_points(Vec2{0, 0}, Vec2{0, 1});
    const rt::Line2 v2 = rt::Line2::from_points(Vec2{3, 0}, Vec2{3, 9});
    CHECK_THROWS_AS(rt::line_intersection_2d(v1, v2), std::domain_error);
}

TEST_CASE("intersection residual stays below 1e-9 over random line pairs") {
    std::mt19937 rng(7002);
    std::uniform_real_distribution<double> coord(-100.0, 100.0);
    int checked = 0;
    while (checked < 1000) {
        const Vec2 a1{coord(rng), coord(rng)};
        const Vec2 a2{coord(rng), coord(rng)};
        const Vec2 b1{coord(rng), coord(rng)};
        const Vec2 b2{coord(rng), coord(rng)};
        if (rt::norm(a2 - a1) < 1e-6 || rt::norm(b2 - b1) < 1e-6) continue;
        const rt::Line2 la = rt::Line2::from_points(a1, a2);
        const rt::Line2 lb = rt::Line2::from_points(b1, b2);
        // Skip near-parallel pairs; the well-conditioned ones must solve exactly.
        const double sine = std::abs(rt::cross(rt::Line2::from_points(a1, a2).direction(),
                                               lb.direction())) /
                            (rt::norm(la.direction()) * rt::norm(lb.direction()));
        if (sine < 1e-3) continue;
        const Vec2 m = rt::line_intersection_2d(la, lb);
        CHECK(line_residual(la, m) < 1e-9);
        CHECK(line_residual(lb, m) < 1e-9);
        ++checked;
    }
}

TEST_CASE("plane signed distance is positive on the normal side") {
    const rt::Plane plane{Vec3{0, 0, 2}, Vec3{0, 0, 1}};
    CHECK(plane.signed_distance(Vec3{5, 5, 7}) == doctest::Approx(5.0));
    CHECK(plane.signed_distance(Vec3{5, 5, -1}) == doctest::Approx(-3.0));
    CHECK(plane.signed_distance(Vec3{1, 2, 2}) == doctest::Approx(0.0));
}

TEST_CASE("mirror image lies across the plane at equal distance") {
    const rt::Plane plane{Vec3{0, 4, 0}, Vec3{0, 1, 0}};
    const Vec3 p{2, 7, 1};
    const Vec3 q = rt::mirror_point(p, plane);
    CHECK(q.x == doctest::Approx(2.0));
    CHECK(q.y == doctest::Approx(1.0));
    CHECK(q.z == doctest::Approx(1.0));
    CHECK(plane.signed_distance(q) == doctest::Approx(-plane.signed_distance(p)));
}

TEST_CASE("mirroring twice is the identity over random points and planes") {
    std::mt19937 rng(7003);
    std::uniform_real_distribution<double> coord(-50.0, 50.0);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 p{coord(rng), coord(rng), coord(rng)};
        const rt::Plane plane{Vec3{coord(rng), coord(rng), coord(rng)}, random_unit(rng)};
        const Vec3 mirrored = rt::mirror_point(p, plane);
        const Vec3 back = rt::mirror_point(mirrored, plane);
        CHECK(rt::distance(back, p) < 1e-9);
        // The midpoint of p and its image lies on the plane.
        const Vec3 mid = (p + mirrored) * 0.5;
        CHECK(std::abs(plane.signed_distance(mid)) < 1e-9);
    }
}

TEST_CASE("convex polygon derives its plane, centroid, and area from the ring") {
    rt::ConvexPolygon square = rt::ConvexPolygon::from_points(
        {Vec3{0, 0, 0}, Vec3{2, 0, 0}, Vec3{2, 2, 0}, Vec3{0, 2, 0}});
    CHECK(square.area() == doctest::Approx(4.0));
    const Vec3 c = square.centroid();
    CHECK(c.x == doctest::Approx(1.0));
    CHECK(c.y == doctest::Approx(1.0));
    CHECK(c.z == doctest::Approx(0.0));
    // Counter-clockwise winding seen from +z gives a +z normal.
    CHECK(square.normal.z == doctest::Approx(1.0));

    CHECK(square.contains(Vec3{1.0, 1.0, 0.0}));
    CHECK(square.contains(Vec3{2.0, 1.0, 0.0}));  // boundary counts as inside
    CHECK(square.contains(Vec3{0.0, 0.0, 0.0}));  // vertex counts as inside
    CHECK_FALSE(square.contains(Vec3{2.1, 1.0, 0.0}));
    CHECK_FALSE(square.contains(Vec3{-0.1, -0.1, 0.0}));
}

TEST_CASE("segment versus face intersection respects open endpoints") {
    const rt::ConvexPolygon wall = rt::ConvexPolygon::from_points(
        {Vec3{0, 5, 0}, Vec3{10, 5, 0}, Vec3{10, 5, 10}, Vec3{0, 5, 10}});

    // A segment punching through the middle reports the crossing point.
    const auto hit = rt::segment_face_intersection(Vec3{5, 0, 5}, Vec3{5, 10, 5}, wall);
    REQUIRE(hit.has_value());
    CHECK(rt::distance(*hit, Vec3{5, 5, 5}) < 1e-12);

    // A segment passing beside the face misses.
    CHECK_FALSE(rt::segment_face_intersection(Vec3{20, 0, 5}, Vec3{20, 10, 5}, wall).has_value());

    // Endpoints on the face plane do not count as blockage: a ray leaving the
    // wall is not blocked by the wall itself.
    CHECK_FALSE(rt::segment_face_intersection(Vec3{5, 5, 5}, Vec3{5, 10, 5}, wall).has_value());
    CHECK_FALSE(rt::segment_face_intersection(Vec3{5, 0, 5}, Vec3{5, 5, 5}, wall).has_value());

    // A segment entirely on one side misses.
    CHECK_FALSE(rt::segment_face_intersection(Vec3{5, 0, 5}, Vec3{5, 4, 5}, wall).has_value());
}

TEST_CASE("strict plane crossing returns the parameter inside the open interval") {
    const rt::Plane plane{Vec3{0, 0, 4}, Vec3{0, 0, 1}};
    const auto cross = rt::segment_plane_crossing(Vec3{0, 0, 0}, Vec3{0, 0, 10}, plane);
    REQUIRE(cross.has_value());
    CHECK(cross->first == doctest::Approx(0.4));
    CHECK(rt::distance(cross->second, Vec3{0, 0, 4}) < 1e-12);

    CHECK_FALSE(rt::segment_plane_crossing(Vec3{0, 0, 5}, Vec3{0, 0, 10}, plane).has_value());
    // An endpoint resting on the plane is not a strict crossing.
    CHECK_FALSE(rt::segment_plane_crossing(Vec3{0, 0, 4}, Vec3{0, 0, 10}, plane).has_value());
}

TEST_CASE("crossing points land on the plane and segment within 1e-9") {
    std::mt19937 rng(7004);
    std::uniform_real_distribution<double> coord(-50.0, 50.0);
    int checked = 0;
    while (checked < 1000) {
        const rt::Plane plane{Vec3{coord(rng), coord(rng), coord(rng)}, random_unit(rng)};
        const Vec3 a{coord(rng), coord(rng), coord(rng)};
        const Vec3 b{coord(rng), coord(rng), coord(rng)};
        const double da = plane.signed_distance(a);
        const double db = plane.signed_distance(b);
        if (da * db >= -1e-6) continue;  // want clear opposite sides
        const auto cross = rt::segment_plane_crossing(a, b, plane);
        REQUIRE(cross.has_value());
        CHECK(cross->first > 0.0);
        CHECK(cross->first < 1.0);
        // Residuals: the point lies on the plane and on the segment.
        CHECK(std::abs(plane.signed_distance(cross->second)) < 1e-9);
        const Vec3 along = a + (b - a) * cross->first;
        CHECK(rt::distance(along, cross->second) < 1e-9);
        ++checked;
    }
}

TEST_CASE("halfspace clipping keeps the non-negative side and the boundary") {
    const std::vector<Vec3> square{Vec3{0, 0, 0}, Vec3{4, 0, 0}, Vec3{4, 4, 0}, Vec3{0, 4, 0}};
    const rt::Plane keep_right{Vec3{2, 0, 0}, Vec3{1, 0, 0}};

    const auto clipped = rt::clip_polygon_halfspace(square, keep_right);
    REQUIRE(clipped.size() == 4);
    double min_x = 1e9;
    for (const auto& p : clipped) min_x = std::min(min_x, p.x);
    CHECK(min_x == doctest::Approx(2.0));
    CHECK(rt::ConvexPolygon::from_points(clipped).area() == doctest::Approx(8.0));

    // Fully inside: unchanged vertex count. Fully outside: empty.
    const rt::Plane keep_all{Vec3{-1, 0, 0}, Vec3{1, 0, 0}};
    CHECK(rt::clip_polygon_halfspace(square, keep_all).size() == 4);
    const rt::Plane keep_none{Vec3{9, 0, 0}, Vec3{1, 0, 0}};
    CHECK(rt::clip_polygon_halfspace(square, keep_none).empty());
}

TEST_CASE("plane frame round-trips in-plane points") {
    std::mt19937 rng(7005);
    std::uniform_real_distribution<double> coord(-20.0, 20.0);
    for (int i = 0; i < 200; ++i) {
        const rt::Plane plane{Vec3{coord(rng), coord(rng), coord(rng)}, random_unit(rng)};
        const rt::PlaneFrame frame = rt::PlaneFrame::from_plane(plane);
        // The frame is orthonormal and aligned with the plane normal.
        CHECK(std::abs(rt::dot(frame.u, frame.v)) < 1e-12);
        CHECK(std::abs(rt::norm(frame.u) - 1.0) < 1e-12);
        CHECK(std::abs(rt::norm(frame.v) - 1.0) < 1e-12);
        CHECK(rt::distance(rt::cross(frame.u, frame.v), frame.normal) < 1e-9);

        const Vec2 q{coord(rng), coord(rng)};
        const Vec3 p = frame.to3d(q);
        CHECK(std::abs(plane.signed_distance(p)) < 1e-9);
        const Vec2 back = frame.to2d(p);
        CHECK(rt::norm(back - q) < 1e-9);
    }
}

TEST_CASE("convex hull drops interior points and orders the ring") {
    std::vector<Vec2> pts{{0, 0}, {4, 0}, {4, 4}, {0, 4}, {2, 2}, {1, 1}, {3, 2}};
    const auto hull = rt::convex_hull_2d(pts);
    CHECK(hull.size() == 4);
    double area2 = 0.0;
    for (size_t i = 0; i < hull.size(); ++i) {
        const Vec2& a = hull[i];
        const Vec2& b = hull[(i + 1) % hull.size()];
        area2 += rt::cross(a, b);
    }
    CHECK(std::abs(area2) / 2.0 == doctest::Approx(16.0));
}

TEST_CASE("convex polygon overlap counts touching boundaries") {
    const std::vector<Vec2> a{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
    const std::vector<Vec2> b{{1, 1}, {3, 1}, {3, 3}, {1, 3}};
    const std::vector<Vec2> c{{2, 0}, {4, 0}, {4, 2}, {2, 2}};  // shares the edge x = 2
    const std::vector<Vec2> d{{5, 5}, {6, 5}, {6, 6}, {5, 6}};
    CHECK(rt::convex_polygons_overlap_2d(a, b));
    CHECK(rt::convex_polygons_overlap_2d(a, c));
    CHECK_FALSE(rt::convex_polygons_overlap_2d(a, d));
}

TEST_CASE("slicing a hull with a plane yields the cross-section") {
    // Unit cube sliced at z = 0.5 gives a unit square cross-section.
    std::vector<Vec3> cube;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z) cube.push_back(Vec3{double(x), double(y), double(z)});
    const rt::Plane plane{Vec3{0, 0, 0.5}, Vec3{0, 0, 1}};
    const rt::PlaneFrame frame = rt::PlaneFrame::from_plane(plane);
    const auto slice = rt::hull_plane_slice(cube, plane, frame);
    REQUIRE(slice.size() >= 3);
    double area2 = 0.0;
    for (size_t i = 0; i < slice.size(); ++i)
        area2 += rt::cross(slice[i], slice[(i + 1) % slice.size()]);
    CHECK(std::abs(area2) / 2.0 == doctest::Approx(1.0));

    // A plane above the hull has no cross-section.
    const rt::Plane above{Vec3{0, 0, 2.0}, Vec3{0, 0, 1}};
    CHECK(rt::hull_plane_slice(cube, above, rt::PlaneFrame::from_plane(above)).empty());
}

}  // TEST_SUITE("geom")
