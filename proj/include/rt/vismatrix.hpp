// SPDX-License-Identifier: Apache-2.0

#ifndef RT_VISMATRIX_HPP
#define RT_VISMATRIX_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rt/geom.hpp"
#include "rt/scene.hpp"

namespace rt {

class VisibilityError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class RelationKind { Parallel, Perpendicular };

/// Geometric relation between two faces inside one working plane. Entries of
/// order >= 2 carry the ordered face chain and the orientation of each link.
struct InterfaceRelation {
    RelationKind kind = RelationKind::Parallel;
    PlaneTag plane = PlaneTag::XY;
    std::vector<std::string> chain;
    std::vector<Orientation> chain_orientations;
};

/// Angles recorded at one bounding edge of the reference face's working-plane
/// segment. Angles are measured from the directed reference line (this edge
/// towards the other edge), opening towards the face's outward side, and are
/// clamped so that anything >= 180 degrees is stored as 0.
struct AngleRecord {
    std::string edge_id;  // scene edge bounding the face at this end, if any
    Vec2 vertex;          // working-plane position of this end
    Vec2 ref_dir;         // unit direction the angles are measured from
    Vec2 outward;         // working-plane outward normal (opening side)
    double low = 0.0;
    double high = 0.0;
};

struct AngularBouncingRange {
    AngleRecord at_a;  // record at plane_segment(ref).a
    AngleRecord at_b;  // record at plane_segment(ref).b
};

enum class ChainVerdict { Full, Partial, None };

struct OcclusionVerdict {
    enum class Kind { Visible, PartiallyVisible, Occluded };
    Kind kind = Kind::Visible;
    std::vector<std::string> blockers;
};

struct InterVisEntry {
    int order = 1;
    std::string ref;
    std::string aim;
    InterfaceRelation relation;
    AngularBouncingRange ranges;
    /// Criterion angles for chains: 180 deg minus the first-leg angles,
    /// clamped like every stored angle.
    std::optional<AngularBouncingRange> criterion;
    ChainVerdict verdict = ChainVerdict::Full;
    /// Reachable sub-intervals of the aim segment (parameter in [0,1]) when
    /// the verdict is Partial; empty means the whole segment.
    std::vector<std::array<double, 2>> subranges;
    /// Faces partially blocking the sightlines of a first-order pair.
    std::vector<std::string> blockers;
    /// Aim-face vertices mirrored through the chain of reference planes.
    std::vector<Vec3> aim_image;
};

class InterVisMatrix {
  public:
    int max_order() const { return max_order_; }
    const std::vector<InterVisEntry>& entries() const { return entries_; }

    /// All plane-tagged entries for one (order, ref, aim) key.
    std::vector<const InterVisEntry*> find(int order, const std::string& ref,
                                           const std::string& aim) const;
    const InterVisEntry* find(int order, const std::string& ref, const std::string& aim,
                              PlaneTag plane) const;

    /// True when the ordered pair has an entry in every working plane that
    /// applies to it (the per-plane records are combined conjunctively).
    bool pair_admitted(const std::string& ref, const std::string& aim) const;

    /// Aim faces reachable from ref at order 1, in deterministic order.
    std::vector<std::string> aims_of(const std::string& ref) const;

    void add(InterVisEntry entry);
    void set_max_order(int order) { max_order_ = order; }

  private:
    int max_order_ = 1;
    std::vector<InterVisEntry> entries_;
    std::map<std::tuple<int, std::string, std::string>, std::vector<size_t>> index_;
};

/// Working planes in which both faces project to segments and the projected
/// normals form a parallel or perpendicular pair. Empty for unsupported
/// (e.g. oblique) pairings.
std::vector<PlaneTag> required_planes(const Face& ref, const Face& aim);

InterfaceRelation classify_relation(const Face& ref, const Face& aim);
InterfaceRelation classify_relation_in_plane(const Face& ref, const Face& aim, PlaneTag plane);

OcclusionVerdict occlusion_judgment(const Face& ref, const Face& aim, const Scene& scene);

AngularBouncingRange first_order_ranges(const Face& ref, const Face& aim,
                                        const InterfaceRelation& rel, const Scene& scene);

struct SecondOrderResult {
    ChainVerdict verdict = ChainVerdict::None;
    std::vector<std::array<double, 2>> reachable;  // aim-segment parameter intervals
};

/// Exact in-plane reachability of `test` via a reflection off `mid` for rays
/// leaving `original`: which part of `test` some double reflection can reach.
SecondOrderResult second_order_check(const Face& original, const Face& mid, const Face& test,
                                     const InterVisMatrix& matrix, PlaneTag plane);

/// Exact 3D feasibility of the double reflection original -> mid -> test:
/// true when the mid face meets the convex hull of `original` and the mirror
/// image of `test` across the mid plane.
bool chain_triple_feasible(const Face& original, const Face& mid, const Face& test);

/// Chain entries for mixed-orientation order-2 chains. Vertical-horizontal-
/// vertical chains decompose into their two first-order legs; horizontal-
/// vertical-vertical chains additionally require the two vertical faces to be
/// parallel, facing, and non-coplanar.
std::vector<InterVisEntry> vertical_horizontal_chain(const Face& a, const Face& b, const Face& c,
                                                     const InterVisMatrix& matrix,
                                                     const Scene& scene);

InterVisMatrix build_matrix(const Scene& scene, int max_order);

void save_matrix(const InterVisMatrix& matrix, const std::string& path);
InterVisMatrix load_matrix(const std::string& path);

/// True when each face has at least one point strictly on the outward side
/// of the other's plane (a reflection between them is then not ruled out).
bool mutually_front(const Face& a, const Face& b);

/// Number of worker threads honouring the VISRT_THREADS override.
int worker_thread_count();

}  // namespace rt

#endif
