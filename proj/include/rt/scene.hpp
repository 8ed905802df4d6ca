// SPDX-License-Identifier: Apache-2.0

#ifndef RT_SCENE_HPP
#define RT_SCENE_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rt/geom.hpp"

namespace rt {

class SceneError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Material {
    std::string name;
    double permittivity = 1.0;  // relative, >= 1
    double conductivity = 0.0;  // S/m, >= 0
};

enum class Orientation { Horizontal, Vertical, Oblique };

/// Optional per-view display names used when printing matrix/table rows.
/// Scene fixtures mirror figures that label a wall by its projected segment,
/// so the same physical face may have one name in the horizontal view and
/// another in the vertical view.
struct FaceLabels {
    std::string xy;
    std::string vert;
};

struct Face {
    std::string id;
    std::string building;  // empty for the ground face
    std::string material;
    ConvexPolygon poly;
    Orientation orientation = Orientation::Vertical;
    FaceLabels labels;
    int index = -1;  // position within Scene::faces()

    /// Display name of this face in one working plane.
    const std::string& label(PlaneTag plane) const {
        if (plane == PlaneTag::XY) return labels.xy.empty() ? id : labels.xy;
        return labels.vert.empty() ? id : labels.vert;
    }
};

struct Edge {
    std::string id;
    Vec3 a, b;
    std::array<std::string, 2> faces;
    std::string building;
};

struct Building {
    std::string id;
    std::vector<Face> faces;
};

/// Axis-aligned projected extent of a face that collapses to a segment in a
/// working plane, together with the projected outward normal.
struct PlaneSegment {
    Vec2 a, b;
    Vec2 normal;
};

class Scene {
  public:
    std::vector<Material> materials;
    std::vector<Building> buildings;
    std::optional<Face> ground;

    /// Validates the scene and derives indexes, orientations, edges and the
    /// bounding box. Must be called after the geometry is assembled.
    void finalize();

    const std::vector<const Face*>& faces() const { return face_ptrs_; }
    const Face& face(int index) const { return *face_ptrs_.at(index); }
    const Face& face(const std::string& id) const;
    bool has_face(const std::string& id) const { return face_index_.count(id) > 0; }
    const std::vector<Edge>& edges() const { return edges_; }
    const Material& material(const std::string& name) const;

    /// True when p lies strictly inside some building volume.
    bool inside_building(const Vec3& p) const;

    Vec3 bbox_min() const { return bbox_min_; }
    Vec3 bbox_max() const { return bbox_max_; }

  private:
    std::vector<const Face*> face_ptrs_;
    std::map<std::string, int> face_index_;
    std::vector<Edge> edges_;
    Vec3 bbox_min_, bbox_max_;
};

/// Segment projection of a face in a working plane, when the projection is
/// one-dimensional (vertical faces in xy; any axis-aligned face in its
/// vertical plane).
std::optional<PlaneSegment> plane_segment(const Face& face, PlaneTag plane);

Scene load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);

struct ManhattanParams {
    int cols = 4;
    int rows = 4;
    double cell = 25.0;    // grid pitch, m
    double margin = 5.0;   // street half-width around each footprint, m
    std::string material = "concrete";
    /// Height per grid cell, row-major [j * cols + i]; zero skips the cell.
    std::vector<double> heights = {
        12, 25, 18, 0,   // j = 0
        18, 0, 24, 16,   // j = 1
        22, 14, 0, 20,   // j = 2
        16, 20, 15, 24,  // j = 3
    };
};

/// Deterministic grid scene: closed box buildings on a shared ground plane.
/// Default parameters give the 13-building benchmark layout.
Scene generate_manhattan_scene(const ManhattanParams& params = {});

struct Trajectory {
    std::vector<Vec3> waypoints;
    std::vector<double> speeds;  // speeds[i] applies from waypoint i to i+1, m/s
    Vec3 azimuth_reference{1, 0, 0};
    Vec3 elevation_reference{0, 0, 1};

    double total_length() const;
    double duration() const;
    Vec3 position_at(double s) const;      // arc length, clamped to [0, length]
    double speed_at(double s) const;
    double time_at(double s) const;        // wall-clock time to reach arc length s
    Vec3 direction_at(double s) const;
};

Trajectory load_trajectory(const std::string& path);
void save_trajectory(const Trajectory& traj, const std::string& path);

}  // namespace rt

#endif
