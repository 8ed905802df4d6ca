// SPDX-License-Identifier: Apache-2.0

#include "rt/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rt {
namespace {

using nlohmann::json;

Orientation classify_orientation(const Vec3& n) {
    const double ax = std::abs(n.x), ay = std::abs(n.y), az = std::abs(n.z);
    if (ax <= kEpsAng && ay <= kEpsAng) return Orientation::Horizontal;
    if (az <= kEpsAng) return Orientation::Vertical;
    return Orientation::Oblique;
}

void validate_face(const Face& face) {
    const auto& pts = face.poly.pts;
    if (pts.size() < 3) {
        throw SceneError("face '" + face.id + "' has fewer than 3 vertices");
    }
    const Plane plane = face.poly.plane();
    for (const Vec3& p : pts) {
        if (std::abs(plane.signed_distance(p)) > 1e-9) {
            throw SceneError("face '" + face.id + "' is not planar");
        }
    }
    // Convexity with consistent winding relative to the stored normal.
    const size_t n = pts.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec3 e0 = pts[(i + 1) % n] - pts[i];
        const Vec3 e1 = pts[(i + 2) % n] - pts[(i + 1) % n];
        if (dot(cross(e0, e1), face.poly.normal) < -kEps) {
            throw SceneError("face '" + face.id + "' is not convex");
        }
    }
    if (face.poly.area() <= kEps) {
        throw SceneError("face '" + face.id + "' is degenerate");
    }
}

struct VertexKey {
    double x, y, z;
    bool operator<(const VertexKey& o) const {
        if (x != o.x) return x < o.x;
        if (y != o.y) return y < o.y;
        return z < o.z;
    }
    bool operator==(const VertexKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

VertexKey key_of(const Vec3& v) { return {v.x, v.y, v.z}; }

}  // namespace

void Scene::finalize() {
    // Materials.
    std::set<std::string> material_names;
    for (const Material& m : materials) {
        if (!material_names.insert(m.name).second) {
            throw SceneError("duplicate material '" + m.name + "'");
        }
        if (m.permittivity < 1.0) {
            throw SceneError("material '" + m.name + "' has relative permittivity < 1");
        }
        if (m.conductivity < 0.0) {
            throw SceneError("material '" + m.name + "' has negative conductivity");
        }
    }

    face_ptrs_.clear();
    face_index_.clear();
    edges_.clear();

    auto register_face = [&](Face& face) {
        validate_face(face);
        if (material_names.count(face.material) == 0) {
            throw SceneError("face '" + face.id + "' references unknown material '" +
                             face.material + "'");
        }
        if (face_index_.count(face.id) > 0) {
            throw SceneError("duplicate face id '" + face.id + "'");
        }
        face.orientation = classify_orientation(face.poly.normal);
        face.index = static_cast<int>(face_ptrs_.size());
        face_index_[face.id] = face.index;
        face_ptrs_.push_back(&face);
    };

    std::set<std::string> building_ids;
    for (Building& b : buildings) {
        if (!building_ids.insert(b.id).second) {
            throw SceneError("duplicate building id '" + b.id + "'");
        }
        if (b.faces.empty()) {
            throw SceneError("building '" + b.id + "' has no faces");
        }
        // Outward normals: every face normal must point away from the
        // building centroid (buildings are convex solids).
        Vec3 centroid{0, 0, 0};
        double count = 0;
        for (const Face& f : b.faces) {
            for (const Vec3& p : f.poly.pts) {
                centroid = centroid + p;
                count += 1;
            }
        }
        centroid = centroid * (1.0 / count);
        for (Face& f : b.faces) {
            f.building = b.id;
            if (dot(f.poly.normal, f.poly.centroid() - centroid) <= 0) {
                throw SceneError("face '" + f.id + "' of building '" + b.id +
                                 "' does not point outward");
            }
            register_face(f);
        }
        // Closed shell: every vertex-pair edge is shared by exactly two faces.
        std::map<std::pair<VertexKey, VertexKey>, std::vector<const Face*>> edge_faces;
        for (const Face& f : b.faces) {
            const size_t n = f.poly.pts.size();
            for (size_t i = 0; i < n; ++i) {
                VertexKey a = key_of(f.poly.pts[i]);
                VertexKey c = key_of(f.poly.pts[(i + 1) % n]);
                if (c < a) std::swap(a, c);
                edge_faces[{a, c}].push_back(&f);
            }
        }
        std::vector<Edge> building_edges;
        for (const auto& [k, fs] : edge_faces) {
            if (fs.size() != 2) {
                throw SceneError("building '" + b.id +
                                 "' is not a closed shell (open edge on face '" +
                                 fs.front()->id + "')");
            }
            Edge e;
            e.a = {k.first.x, k.first.y, k.first.z};
            e.b = {k.second.x, k.second.y, k.second.z};
            e.faces = {fs[0]->id, fs[1]->id};
            e.building = b.id;
            building_edges.push_back(e);
        }
        for (size_t i = 0; i < building_edges.size(); ++i) {
            building_edges[i].id = b.id + "/e" + std::to_string(i);
            edges_.push_back(building_edges[i]);
        }
    }

    if (ground) {
        ground->building.clear();
        if (classify_orientation(ground->poly.normal) != Orientation::Horizontal ||
            ground->poly.normal.z <= 0) {
            throw SceneError("ground face '" + ground->id + "' must be horizontal, facing up");
        }
        register_face(*ground);
    }

    if (face_ptrs_.empty()) {
        throw SceneError("scene has no faces");
    }

    bbox_min_ = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                 std::numeric_limits<double>::max()};
    bbox_max_ = {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
                 std::numeric_limits<double>::lowest()};
    for (const Face* f : face_ptrs_) {
        for (const Vec3& p : f->poly.pts) {
            bbox_min_ = {std::min(bbox_min_.x, p.x), std::min(bbox_min_.y, p.y),
                         std::min(bbox_min_.z, p.z)};
            bbox_max_ = {std::max(bbox_max_.x, p.x), std::max(bbox_max_.y, p.y),
                         std::max(bbox_max_.z, p.z)};
        }
    }
}

const Face& Scene::face(const std::string& id) const {
    auto it = face_index_.find(id);
    if (it == face_index_.end()) {
        throw SceneError("unknown face id '" + id + "'");
    }
    return *face_ptrs_[static_cast<size_t>(it->second)];
}

const Material& Scene::material(const std::string& name) const {
    for (const Material& m : materials) {
        if (m.name == name) return m;
    }
    throw SceneError("unknown material '" + name + "'");
}

bool Scene::inside_building(const Vec3& p) const {
    for (const Building& b : buildings) {
        bool inside = true;
        for (const Face& f : b.faces) {
            if (f.poly.plane().signed_distance(p) >= -kEps) {
                inside = false;
                break;
            }
        }
        if (inside) return true;
    }
    return false;
}

std::optional<PlaneSegment> plane_segment(const Face& face, PlaneTag plane) {
    std::vector<Vec2> pts;
    pts.reserve(face.poly.pts.size());
    for (const Vec3& p : face.poly.pts) pts.push_back(project(p, plane));

    Vec2 lo = pts[0], hi = pts[0];
    for (const Vec2& p : pts) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    Vec2 a, b;
    if (hi.x - lo.x <= kEps && hi.y - lo.y <= kEps) {
        return std::nullopt;  // projects to a point
    } else if (hi.x - lo.x <= kEps) {
        a = {lo.x, lo.y};
        b = {lo.x, hi.y};
    } else if (hi.y - lo.y <= kEps) {
        a = {lo.x, lo.y};
        b = {hi.x, lo.y};
    } else {
        // Accept any collinear projection (e.g. a tilted wall in xy).
        const Vec2 d = {hi.x - lo.x, hi.y - lo.y};
        double tmin = std::numeric_limits<double>::max();
        double tmax = std::numeric_limits<double>::lowest();
        Vec2 pmin{}, pmax{};
        for (const Vec2& p : pts) {
            const Vec2 rel = {p.x - lo.x, p.y - lo.y};
            if (std::abs(cross(d, rel)) > kEps * (norm(d) + 1.0)) {
                return std::nullopt;  // two-dimensional footprint
            }
            const double t = dot(d, rel);
            if (t < tmin) { tmin = t; pmin = p; }
            if (t > tmax) { tmax = t; pmax = p; }
        }
        a = pmin;
        b = pmax;
    }
    const Vec2 n2 = project_direction(face.poly.normal, plane);
    const double len = norm(n2);
    if (len <= kEps) return std::nullopt;  // normal collapses: face lies flat in this view
    return PlaneSegment{a, b, n2 * (1.0 / len)};
}

namespace {

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Face face_from_json(const json& jf, const std::vector<Vec3>& vertices) {
    Face face;
    face.id = jf.at("id").get<std::string>();
    face.material = jf.at("material").get<std::string>();
    std::vector<Vec3> pts;
    for (const auto& idx : jf.at("vertices")) {
        const auto i = idx.get<size_t>();
        if (i >= vertices.size()) {
            throw SceneError("face '" + face.id + "' references vertex " + std::to_string(i) +
                             " out of range");
        }
        pts.push_back(vertices[i]);
    }
    try {
        face.poly = ConvexPolygon::from_points(pts);
    } catch (const std::exception& e) {
        throw SceneError("face '" + face.id + "': " + e.what());
    }
    if (jf.contains("labels")) {
        const auto& jl = jf.at("labels");
        if (jl.contains("xy")) face.labels.xy = jl.at("xy").get<std::string>();
        if (jl.contains("vert")) face.labels.vert = jl.at("vert").get<std::string>();
    }
    return face;
}

}  // namespace

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw SceneError("cannot open scene file '" + path + "'");
    }
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw SceneError("scene file '" + path + "' is not valid JSON: " + e.what());
    }

    Scene scene;
    for (const auto& jm : j.value("materials", json::array())) {
        Material m;
        m.name = jm.at("name").get<std::string>();
        m.permittivity = jm.at("permittivity").get<double>();
        m.conductivity = jm.at("conductivity").get<double>();
        scene.materials.push_back(m);
    }
    std::vector<Vec3> vertices;
    for (const auto& jv : j.value("vertices", json::array())) {
        vertices.push_back({jv.at(0).get<double>(), jv.at(1).get<double>(), jv.at(2).get<double>()});
    }
    for (const auto& jb : j.value("buildings", json::array())) {
        Building b;
        b.id = jb.at("id").get<std::string>();
        for (const auto& jf : jb.at("faces")) {
            b.faces.push_back(face_from_json(jf, vertices));
        }
        scene.buildings.push_back(std::move(b));
    }
    if (j.contains("ground")) {
        scene.ground = face_from_json(j.at("ground"), vertices);
    }
    scene.finalize();
    return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
    json j;
    j["materials"] = json::array();
    for (const Material& m : scene.materials) {
        j["materials"].push_back(
            {{"name", m.name}, {"permittivity", m.permittivity}, {"conductivity", m.conductivity}});
    }

    std::vector<Vec3> vertices;
    std::map<VertexKey, size_t> vertex_index;
    auto intern = [&](const Vec3& v) -> size_t {
        const VertexKey k = key_of(v);
        auto it = vertex_index.find(k);
        if (it != vertex_index.end()) return it->second;
        vertices.push_back(v);
        vertex_index[k] = vertices.size() - 1;
        return vertices.size() - 1;
    };
    auto face_to_json = [&](const Face& f) {
        json jf;
        jf["id"] = f.id;
        jf["material"] = f.material;
        json idx = json::array();
        for (const Vec3& p : f.poly.pts) idx.push_back(intern(p));
        jf["vertices"] = idx;
        if (!f.labels.xy.empty() || !f.labels.vert.empty()) {
            json jl;
            if (!f.labels.xy.empty()) jl["xy"] = f.labels.xy;
            if (!f.labels.vert.empty()) jl["vert"] = f.labels.vert;
            jf["labels"] = jl;
        }
        return jf;
    };

    j["buildings"] = json::array();
    for (const Building& b : scene.buildings) {
        json jb;
        jb["id"] = b.id;
        jb["faces"] = json::array();
        for (const Face& f : b.faces) jb["faces"].push_back(face_to_json(f));
        j["buildings"].push_back(jb);
    }
    if (scene.ground) {
        j["ground"] = face_to_json(*scene.ground);
    }
    j["vertices"] = json::array();
    for (const Vec3& v : vertices) j["vertices"].push_back(vec_to_json(v));

    std::ofstream out(path);
    if (!out) {
        throw SceneError("cannot write scene file '" + path + "'");
    }
    out << j.dump(2) << "\n";
}

namespace {

Building make_box_building(const std::string& id, const Vec3& lo, const Vec3& hi,
                           const std::string& material) {
    Building b;
    b.id = id;
    auto add = [&](const std::string& suffix, std::initializer_list<Vec3> pts) {
        Face f;
        f.id = id + "_" + suffix;
        f.material = material;
        f.poly = ConvexPolygon::from_points(std::vector<Vec3>(pts));
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

}  // namespace

Scene generate_manhattan_scene(const ManhattanParams& params) {
    if (params.cols < 1 || params.rows < 1) {
        throw SceneError("grid must have at least one cell");
    }
    if (params.heights.size() != static_cast<size_t>(params.cols * params.rows)) {
        throw SceneError("heights list must have cols*rows entries");
    }
    if (params.margin * 2 >= params.cell) {
        throw SceneError("margins leave no room for footprints");
    }
    Scene scene;
    scene.materials.push_back({params.material, 5.31, 0.139});

    for (int j = 0; j < params.rows; ++j) {
        for (int i = 0; i < params.cols; ++i) {
            const double h = params.heights[static_cast<size_t>(j * params.cols + i)];
            if (h <= 0) continue;
            const Vec3 lo{params.cell * i + params.margin, params.cell * j + params.margin, 0};
            const Vec3 hi{params.cell * (i + 1) - params.margin,
                          params.cell * (j + 1) - params.margin, h};
            const std::string id = "B_" + std::to_string(i) + "_" + std::to_string(j);
            scene.buildings.push_back(make_box_building(id, lo, hi, params.material));
        }
    }

    const double w = params.cell * params.cols;
    const double d = params.cell * params.rows;
    Face ground;
    ground.id = "ground";
    ground.material = params.material;
    ground.poly = ConvexPolygon::from_points({{0, 0, 0}, {w, 0, 0}, {w, d, 0}, {0, d, 0}});
    scene.ground = ground;

    scene.finalize();
    return scene;
}

double Trajectory::total_length() const {
    double len = 0;
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        len += norm(waypoints[i + 1] - waypoints[i]);
    }
    return len;
}

double Trajectory::duration() const {
    double t = 0;
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        t += norm(waypoints[i + 1] - waypoints[i]) / speeds[i];
    }
    return t;
}

Vec3 Trajectory::position_at(double s) const {
    if (s <= 0) return waypoints.front();
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        const double seg = norm(waypoints[i + 1] - waypoints[i]);
        if (s <= seg) {
            return waypoints[i] + (waypoints[i + 1] - waypoints[i]) * (s / seg);
        }
        s -= seg;
    }
    return waypoints.back();
}

double Trajectory::speed_at(double s) const {
    if (s <= 0) return speeds.front();
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        const double seg = norm(waypoints[i + 1] - waypoints[i]);
        if (s <= seg) return speeds[i];
        s -= seg;
    }
    return speeds.back();
}

double Trajectory::time_at(double s) const {
    double t = 0;
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        const double seg = norm(waypoints[i + 1] - waypoints[i]);
        if (s <= seg) return t + s / speeds[i];
        s -= seg;
        t += seg / speeds[i];
    }
    return t;
}

Vec3 Trajectory::direction_at(double s) const {
    if (s < 0) s = 0;
    for (size_t i = 0; i + 1 < waypoints.size(); ++i) {
        const double seg = norm(waypoints[i + 1] - waypoints[i]);
        if (s <= seg || i + 2 == waypoints.size()) {
            return normalized(waypoints[i + 1] - waypoints[i]);
        }
        s -= seg;
    }
    return normalized(waypoints.back() - waypoints[waypoints.size() - 2]);
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw SceneError("cannot open trajectory file '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw SceneError("trajectory file '" + path + "' is not valid JSON: " + e.what());
    }
    const auto& jw = j.contains("waypoints") ? j.at("waypoints") : j;
    Trajectory traj;
    for (const auto& row : jw) {
        if (row.size() < 4) {
            throw SceneError("trajectory rows must be [x, y, z, speed]");
        }
        traj.waypoints.push_back(
            {row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>()});
        traj.speeds.push_back(row.at(3).get<double>());
    }
    if (traj.waypoints.size() < 2) {
        throw SceneError("trajectory needs at least two waypoints");
    }
    for (size_t i = 0; i + 1 < traj.waypoints.size(); ++i) {
        if (norm(traj.waypoints[i + 1] - traj.waypoints[i]) <= kEps) {
            throw SceneError("trajectory waypoints " + std::to_string(i) + " and " +
                             std::to_string(i + 1) + " coincide");
        }
        if (traj.speeds[i] <= 0) {
            throw SceneError("trajectory segment " + std::to_string(i) +
                             " has non-positive speed");
        }
    }
    return traj;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < traj.waypoints.size(); ++i) {
        const Vec3& w = traj.waypoints[i];
        rows.push_back({w.x, w.y, w.z, traj.speeds[i]});
    }
    std::ofstream out(path);
    if (!out) {
        throw SceneError("cannot write trajectory file '" + path + "'");
    }
    out << nlohmann::json({{"waypoints", rows}}).dump(2) << "\n";
}

}  // namespace rt
