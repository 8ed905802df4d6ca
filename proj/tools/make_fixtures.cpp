// SPDX-License-Identifier: Apache-2.0
//
// Writes the bundled example scenes and routes. Run with an output directory
// argument (default: data/fixtures relative to the working directory). Every
// output is deterministic, so regenerating leaves committed files unchanged.

#include <filesystem>
#include <initializer_list>
#include <iostream>
#include <string>
#include <vector>

#include "rt/scene.hpp"

namespace {

rt::Building box_building(const std::string& id, const rt::Vec3& lo, const rt::Vec3& hi,
                          const std::string& material) {
    rt::Building b;
    b.id = id;
    auto add = [&](const std::string& suffix, std::initializer_list<rt::Vec3> pts) {
        rt::Face f;
        f.id = id + "_" + suffix;
        f.material = material;
        f.poly = rt::ConvexPolygon::from_points(std::vector<rt::Vec3>(pts));
        b.faces.push_back(std::move(f));
    };
    add("s", {{lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, lo.y, hi.z}, {lo.x, lo.y, hi.z}});
    add("n", {{lo.x, hi.y, lo.z}, {lo.x, hi.y, hi.z}, {hi.x, hi.y, hi.z}, {hi.x, hi.y, lo.z}});
    add("w", {{lo.x, lo.y, lo.z}, {lo.x, lo.y, hi.z}, {lo.x, hi.y, hi.z}, {lo.x, hi.y, lo.z}});
    add("e", {{hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {hi.x, hi.y, hi.z}, {hi.x, lo.y, hi.z}});
    add("roof", {{lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z}});
    add("base", {{lo.x, lo.y, lo.z}, {lo.x, hi.y, lo.z}, {hi.x, hi.y, lo.z}, {hi.x, lo.y, lo.z}});
    return b;
}

rt::Face& face_of(rt::Building& b, const std::string& id) {
    for (rt::Face& f : b.faces) {
        if (f.id == id) return f;
    }
    throw std::runtime_error("no face " + id);
}

rt::Face ground_face(double x0, double y0, double x1, double y1, const std::string& material) {
    rt::Face g;
    g.id = "ground";
    g.material = material;
    g.poly = rt::ConvexPolygon::from_points(
        {{x0, y0, 0}, {x1, y0, 0}, {x1, y1, 0}, {x0, y1, 0}});
    return g;
}

/// Two facing buildings; the display labels name the projected wall segments
/// the way the bundled docs discuss them: AB/EF in plan view, FG/HJ/HI in the
/// vertical view.
rt::Scene two_building_scene() {
    rt::Scene scene;
    scene.materials.push_back({"concrete", 5.31, 0.139});
    rt::Building b1 = box_building("B1", {0, 0, 0}, {10, 10, 30}, "concrete");
    rt::Building b2 = box_building("B2", {0, 20, 0}, {10, 30, 10}, "concrete");
    face_of(b1, "B1_n").labels = {"AB", "FG"};
    face_of(b2, "B2_s").labels = {"EF", "HJ"};
    face_of(b2, "B2_roof").labels = {"", "HI"};
    scene.buildings.push_back(std::move(b1));
    scene.buildings.push_back(std::move(b2));
    scene.finalize();
    return scene;
}

/// The two-building scene plus the street ground strip between them, labeled
/// for per-point table tests (source above the lower roof).
rt::Scene street_canyon_scene() {
    rt::Scene scene;
    scene.materials.push_back({"concrete", 5.31, 0.139});
    rt::Building b1 = box_building("B1", {0, 0, 0}, {10, 10, 30}, "concrete");
    rt::Building b2 = box_building("B2", {0, 20, 0}, {10, 30, 10}, "concrete");
    face_of(b1, "B1_n").labels = {"AB", "AC"};
    face_of(b2, "B2_s").labels = {"EF", "EG"};
    face_of(b2, "B2_roof").labels = {"", "EI"};
    scene.buildings.push_back(std::move(b1));
    scene.buildings.push_back(std::move(b2));
    scene.ground = ground_face(0, 10, 10, 20, "concrete");
    scene.ground->labels = {"", "CG"};
    scene.finalize();
    return scene;
}

/// A wall behind a wide screen: a straight drive past the pair crosses
/// hand-computable creation/suppression boundaries (corner rays through the
/// screen ends at arc lengths 10/3, 4, 46 and 140/3 for the route bundled
/// alongside).
rt::Scene screened_wall_scene() {
    rt::Scene scene;
    scene.materials.push_back({"concrete", 5.31, 0.139});
    scene.buildings.push_back(box_building("K", {10, 20, 0}, {40, 22, 10}, "concrete"));
    scene.buildings.push_back(box_building("W", {20, 40, 0}, {30, 42, 10}, "concrete"));
    scene.finalize();
    return scene;
}

/// Flat ground only: the canonical two-ray link (line of sight plus one
/// ground bounce).
rt::Scene open_field_scene() {
    rt::Scene scene;
    scene.materials.push_back({"concrete", 5.31, 0.139});
    scene.ground = ground_face(0, 0, 100, 100, "concrete");
    scene.finalize();
    return scene;
}

rt::Trajectory line_route(const rt::Vec3& a, const rt::Vec3& b, double speed) {
    rt::Trajectory t;
    t.waypoints = {a, b};
    t.speeds = {speed};
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    std::filesystem::path dir = argc > 1 ? argv[1] : "data/fixtures";
    std::filesystem::create_directories(dir);
    auto put_scene = [&](const rt::Scene& s, const std::string& name) {
        rt::save_scene(s, (dir / name).string());
        std::cout << (dir / name).string() << "\n";
    };
    auto put_route = [&](const rt::Trajectory& t, const std::string& name) {
        rt::save_trajectory(t, (dir / name).string());
        std::cout << (dir / name).string() << "\n";
    };

    put_scene(rt::generate_manhattan_scene(), "manhattan.json");
    put_route(line_route({5, 25, 2}, {95, 25, 2}, 5.0), "route_manhattan.json");
    put_scene(two_building_scene(), "two_buildings.json");
    put_scene(street_canyon_scene(), "street_canyon.json");
    put_scene(screened_wall_scene(), "screened_wall.json");
    put_route(line_route({0, 10, 2}, {50, 10, 2}, 5.0), "route_drive_by.json");
    put_route(line_route({5, 30, 2}, {15, 30, 2}, 2.0), "route_corridor.json");
    put_scene(open_field_scene(), "open_field.json");
    return 0;
}
