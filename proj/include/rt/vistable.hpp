#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <rt/geom.hpp>
#include <rt/scene.hpp>
#include <rt/vismatrix.hpp>

namespace rt {

/// Per-working-plane slice of the region a point source illuminates on one
/// face: the mirrored source, the source-visible sub-segment, and the
/// boundary-ray angles at both the full and the effective endpoints. Angles
/// follow the per-vertex convention used by the matrix records: measured from
/// the endpoint's edge direction, opening toward the outward normal.
struct PlaneIllumination {
    PlaneTag plane = PlaneTag::XY;
    Vec2 image;    ///< source mirrored across the face line, plane coords
    Vec2 face_a;   ///< full segment endpoints in plane coords
    Vec2 face_b;
    Vec2 outward;  ///< 2D outward normal of the face in this plane
    double alpha_full = 0.0;  ///< boundary-ray angle at face_a
    double beta_full = 0.0;   ///< boundary-ray angle at face_b
    std::array<double, 2> sub{0.0, 1.0};  ///< visible param interval of [a,b]
    Vec2 sub_a;  ///< effective (possibly clipped) endpoints
    Vec2 sub_b;
    double alpha = 0.0;  ///< boundary-ray angle at sub_a
    double beta = 0.0;   ///< boundary-ray angle at sub_b
    bool clipped = false;
    /// Where a blocker cuts the face (e.g. the shadow line of a wall top
    /// edge); one point per clipped end, at most two.
    std::vector<Vec2> clip_points;
};

/// The part of one face a point source can illuminate, per working plane.
struct IlluminatedRegion {
    std::string face;
    Vec3 source;
    std::vector<PlaneIllumination> planes;

    const PlaneIllumination* plane(PlaneTag tag) const;
};

/// Outcome of testing whether a reflected beam reaches an aim face.
struct HigherOrderResult {
    ChainVerdict verdict = ChainVerdict::None;
    /// Reachable parameter interval of the aim segment (empty when None).
    std::array<double, 2> window{0.0, 0.0};
    /// Intersection of the limiting sight line with the aim segment when the
    /// coverage is partial.
    std::optional<Vec2> clip_point;
};

/// One row of the per-point visibility table. Rows are plane-tagged like the
/// matrix records; the display names carry fixture labels with a prime
/// appended when the source sees only part of the face (e.g. "AC'").
struct VisTableEntry {
    int order = 1;
    std::string parent;  ///< "transmitter" for order 1, else the prior face
    std::string ref;
    std::string aim;
    PlaneTag plane = PlaneTag::XY;
    std::string parent_display;
    std::string ref_display;
    std::string aim_display;
    /// Full when the whole reference face reflects toward the source beam,
    /// Partial when only a sub-segment does.
    ChainVerdict verdict = ChainVerdict::Full;
    /// Reflector faces of the path, source side first; aim excluded.
    std::vector<std::string> chain;
};

/// One visibility range of a node (face, or face corner "face#k") along a
/// trajectory. Boundary labels are "P<i>" for ranges bounded in the horizontal
/// plane and "P<i>'" for boundaries first found in a vertical working plane;
/// "-" marks the trajectory ends.
struct MobileVisEntry {
    int order = 1;
    std::string node;
    std::string node_display;
    double s_start = 0.0;
    double s_end = 0.0;
    std::string label_start;
    std::string label_end;
    std::string parent;
    std::string blockage;  ///< building id causing the bounding event, or "-"
};

/// One constant-ray-set stretch of the route.
struct CoherenceSegment {
    int l = 1;          ///< 1-based range index
    double d = 0.0;     ///< route distance of the range, metres
    double v = 0.0;     ///< speed over the range, metres/second
    double tc = 0.0;    ///< coherence time d / v, seconds
    double gamma_e = 0.0;  ///< elevation projection angle, degrees
    double gamma_a = 0.0;  ///< azimuth projection angle, degrees
};

struct CoherenceResult {
    std::vector<CoherenceSegment> segments;
    double average = 0.0;
};

/// Arc-length sampling step and bisection tolerance for trajectory tables.
inline constexpr double kTrajectoryStep = 0.5;
inline constexpr double kBoundaryTolerance = 1e-3;

/// Region of `face` illuminated by `source`: per-plane visible sub-segment and
/// boundary angles. nullopt when the face is back-facing or fully hidden.
/// Throws VisibilityError when the source lies on the face plane.
std::optional<IlluminatedRegion> illuminated_region(const Vec3& source, const Face& face,
                                                    const Scene& scene);

/// Whether the beam reflected off the region's face reaches the entry's aim
/// face, evaluated in the entry's working plane. Throws VisibilityError when
/// the entry does not reference the region's face or the region has no record
/// for the entry's plane.
HigherOrderResult higher_order_visibility(const IlluminatedRegion& region,
                                          const InterVisEntry& entry, const Scene& scene);

/// Per-point visibility table: one row per (reachable reflector chain, aim
/// face, working plane), orders 1..max_order.
std::vector<VisTableEntry> point_vis_table(const Vec3& source, const InterVisMatrix& matrix,
                                           const Scene& scene, int max_order);

/// Nearest scene edge with an unobstructed sightline from the receiver to the
/// closest point of the edge; ties broken by lowest edge id. nullopt when no
/// edge is visible.
std::optional<Edge> closest_diffraction_edge(const Vec3& receiver, const Scene& scene);

/// Overload keeping the call site uniform with the other table queries; edge
/// candidates come from the scene itself, so the matrix is not consulted.
std::optional<Edge> closest_diffraction_edge(const Vec3& receiver, const Scene& scene,
                                             const InterVisMatrix& matrix);

/// Visibility ranges of every node along the trajectory: samples the
/// per-point table at kTrajectoryStep, bisects each membership change to
/// kBoundaryTolerance, merges ranges, and attributes each bounding event to a
/// blocking building. Vertical-plane boundaries are located first and carry
/// primed labels.
std::vector<MobileVisEntry> trajectory_vis_table(const Trajectory& traj,
                                                 const InterVisMatrix& matrix, const Scene& scene,
                                                 int max_order);

/// Coherence segments from the creation/suppression boundaries of all
/// face-node ranges of order < 3, plus the average coherence time. With a
/// second mover, per-range times are the minimum across both movers after
/// pairing ranges in wall-clock order.
CoherenceResult coherence_times(const std::vector<MobileVisEntry>& table, const Trajectory& traj,
                                const std::optional<std::pair<std::vector<MobileVisEntry>,
                                                              Trajectory>>& second = std::nullopt);

/// CSV export, columns: order,visible_node,s_start,s_end,parent,blockage.
std::string mobile_table_csv(const std::vector<MobileVisEntry>& table);

/// CSV export, columns: l,d_l,v_l,T_c_l, with a trailing average row.
std::string coherence_csv(const CoherenceResult& result);

}  // namespace rt
