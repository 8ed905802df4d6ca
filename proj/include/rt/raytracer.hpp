// SPDX-License-Identifier: Apache-2.0

#ifndef RT_RAYTRACER_HPP
#define RT_RAYTRACER_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rt/geom.hpp"
#include "rt/scene.hpp"
#include "rt/vismatrix.hpp"
#include "rt/vistable.hpp"

namespace rt {

/// Endpoint placement problems (coincident endpoints, endpoint inside a
/// building volume).
class PlacementError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class InteractionKind { Reflection, Diffraction };

struct Interaction {
    InteractionKind kind = InteractionKind::Reflection;
    std::string id;  ///< face id for reflections, edge id for diffractions
    Vec3 point;
};

/// One propagation path. The vertex list runs source, interaction points in
/// order, receiver; an empty interaction list is the line-of-sight path.
struct Path {
    std::vector<Interaction> interactions;
    Vec3 source;
    Vec3 receiver;
    std::vector<Vec3> points;  ///< source, interaction points..., receiver
    double length = 0.0;       ///< metres
    double delay = 0.0;        ///< seconds, length / c

    /// Canonical identity: "LOS", or the (kind, id) sequence joined by '/',
    /// e.g. "R:B_0_0_n/R:B_1_0_w/D:B_1_0_we_top". Set comparison between
    /// tracers keys on this string; coordinates are compared secondarily.
    std::string identity() const;
};

/// One mirrored source in the image hierarchy: the source image after the
/// reflections of every ancestor, in root-to-leaf order.
struct ImageTreeNode {
    std::string face;   ///< reflecting face of this node
    Vec3 image;         ///< parent image mirrored across this face's plane
    int parent = -1;    ///< index into the node vector, -1 for depth-1 roots
    int depth = 1;
};

/// Mirror hierarchy rooted at `source`, expanded over every scene face and
/// pruned only where the parent image lies behind the candidate face (no
/// reflection can originate there). Nodes appear in deterministic DFS order.
std::vector<ImageTreeNode> image_tree(const Scene& scene, const Vec3& source, int max_depth);

/// Work counters for one trace call, used by benchmarks and determinism
/// checks. Candidate counts are deterministic; timing is not.
struct TraceStats {
    long long nodes_expanded = 0;      ///< image-tree nodes visited
    long long sequences_checked = 0;   ///< candidate sequences unfolded
    long long occlusion_tests = 0;     ///< segment-vs-face queries
    long long paths_found = 0;
};

/// Exhaustive conventional image-method search: line of sight, every
/// reflection sequence up to max_refl over all faces, and optionally one
/// final diffraction at the receiver's closest visible edge. The image tree
/// is grown blind — each node mirrors across every face except the immediate
/// repeat, N·(N−1)^(d−1) nodes at depth d — and every candidate is validated
/// end to end: mirror images must lie in front of their faces, backward
/// unfolding must place each reflection point inside its face, and every
/// segment must pass occlusion tests. Paths return sorted by identity.
/// Throws PlacementError when the endpoints coincide or lie inside a
/// building.
std::vector<Path> brute_force_trace(const Scene& scene, const Vec3& tx, const Vec3& rx,
                                    int max_refl, bool allow_diffraction,
                                    TraceStats* stats = nullptr);

namespace detail {
struct ChainFilter;
}

/// Query-independent search index over the reflector chains recorded in an
/// inter-visibility matrix. Construction is the only step that reads the
/// matrix; build it once per scene and matrix, then run any number of traces
/// against it (trace() is const and safe to call concurrently — every call
/// owns its working state). The scene and matrix must outlive the index.
/// Requires 0 <= max_refl <= matrix.max_order() (VisibilityError otherwise).
class TraceAccelerator {
  public:
    TraceAccelerator(const Scene& scene, const InterVisMatrix& matrix, int max_refl);
    ~TraceAccelerator();
    TraceAccelerator(TraceAccelerator&&) noexcept;
    TraceAccelerator& operator=(TraceAccelerator&&) noexcept;

    /// Same path-set contract, validation and errors as brute_force_trace —
    /// the two tracers return identical paths — but the image tree is grown
    /// with visibility knowledge: children whose parent image lies behind the
    /// candidate face are pruned, and reflection sequences of length >= 2 are
    /// only explored along the recorded face chains. Sequences touching an
    /// oblique face fall back to the full expansion.
    std::vector<Path> trace(const Vec3& tx, const Vec3& rx, bool allow_diffraction,
                            TraceStats* stats = nullptr) const;

    int max_reflections() const { return max_refl_; }

  private:
    const Scene* scene_;
    int max_refl_;
    std::unique_ptr<const detail::ChainFilter> filter_;
};

/// Convenience form of TraceAccelerator for one-off queries: builds the chain
/// index and runs a single trace. Same results, validation and errors.
std::vector<Path> accelerated_trace(const Scene& scene, const InterVisMatrix& matrix,
                                    const Vec3& tx, const Vec3& rx, int max_refl,
                                    bool allow_diffraction, TraceStats* stats = nullptr);

/// Paths at one sample position along a trajectory run.
struct DynamicSample {
    double s = 0.0;      ///< arc length of the moving end, metres
    double t = 0.0;      ///< wall-clock time, seconds
    int segment = 1;     ///< 1-based coherence segment index
    bool retraced = false;  ///< true when a full trace ran at this sample
    std::vector<Path> paths;
};

struct DynamicResult {
    std::vector<MobileVisEntry> table;
    CoherenceResult coherence;
    std::vector<DynamicSample> samples;
    int full_traces = 0;  ///< number of complete searches performed
};

/// Trajectory run against a fixed receiver: a full accelerated search runs
/// once per coherence segment (at its first sample); every other sample only
/// re-solves the geometry of the segment's interaction sequences for the
/// moved transmitter, dropping sequences that lose validity. Sampling steps
/// along arc length; the trajectory end is always sampled.
DynamicResult dynamic_trace(const Scene& scene, const InterVisMatrix& matrix,
                            const Trajectory& traj, const Vec3& rx, int max_refl,
                            bool allow_diffraction = true, double sample_step = kTrajectoryStep);

/// Two moving ends: coherence segments combine both movers' visibility tables
/// by the per-range minimum rule; sampling steps in wall-clock time so both
/// endpoints advance together. The arc length reported per sample is the
/// first mover's.
DynamicResult dynamic_trace(const Scene& scene, const InterVisMatrix& matrix,
                            const Trajectory& traj_tx, const Trajectory& traj_rx, int max_refl,
                            bool allow_diffraction = true, double sample_step = kTrajectoryStep);

/// Structured-text dump: one block per path with identity, interaction
/// points, length and delay.
std::string path_dump(const std::vector<Path>& paths);

}  // namespace rt

#endif
