// SPDX-License-Identifier: Apache-2.0

#include "rt/raytracer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rt {

namespace {

std::string kind_prefix(InteractionKind kind) {
    return kind == InteractionKind::Reflection ? "R:" : "D:";
}

/// Face planes indexed by face index, computed once per search or run.
std::vector<Plane> face_planes(const Scene& scene) {
    std::vector<Plane> planes;
    planes.reserve(scene.faces().size());
    for (const Face* f : scene.faces()) planes.push_back(f->poly.plane());
    return planes;
}

// ---------------------------------------------------------------------------
// Occlusion queries on a horizontal uniform grid
//
// Every face registers into the grid cells its horizontal footprint overlaps,
// dilated by one cell as a guard band. A query walks the cells crossed by the
// segment's horizontal projection and tests only the faces gathered there.
// The verdict matches testing every face: a face intersecting the segment
// overlaps a crossed cell, and the guard band absorbs boundary rounding.
// ---------------------------------------------------------------------------

struct FaceBox {
    Vec3 lo, hi;
};

class Occluder {
  public:
    explicit Occluder(const Scene& scene) : scene_(scene) {
        const auto& faces = scene.faces();
        boxes_.reserve(faces.size());
        Vec3 lo{0, 0, 0}, hi{0, 0, 0};
        for (const Face* f : faces) {
            FaceBox b;
            b.lo = b.hi = f->poly.pts.front();
            for (const Vec3& p : f->poly.pts) {
                b.lo = {std::min(b.lo.x, p.x), std::min(b.lo.y, p.y), std::min(b.lo.z, p.z)};
                b.hi = {std::max(b.hi.x, p.x), std::max(b.hi.y, p.y), std::max(b.hi.z, p.z)};
            }
            if (boxes_.empty()) {
                lo = b.lo;
                hi = b.hi;
            } else {
                lo = {std::min(lo.x, b.lo.x), std::min(lo.y, b.lo.y), std::min(lo.z, b.lo.z)};
                hi = {std::max(hi.x, b.hi.x), std::max(hi.y, b.hi.y), std::max(hi.z, b.hi.z)};
            }
            boxes_.push_back(b);
        }
        stamp_.assign(faces.size(), 0);
        x0_ = lo.x;
        y0_ = lo.y;
        const double span = std::max({hi.x - lo.x, hi.y - lo.y, 1.0});
        cell_ = std::max(span / 48.0, 0.25);
        inv_ = 1.0 / cell_;
        nx_ = std::clamp(static_cast<int>((hi.x - lo.x) * inv_) + 1, 1, 256);
        ny_ = std::clamp(static_cast<int>((hi.y - lo.y) * inv_) + 1, 1, 256);
        cells_.assign(static_cast<size_t>(nx_) * static_cast<size_t>(ny_), {});
        for (size_t i = 0; i < boxes_.size(); ++i) {
            const int cx0 = std::max(cell_x(boxes_[i].lo.x) - 1, 0);
            const int cx1 = std::min(cell_x(boxes_[i].hi.x) + 1, nx_ - 1);
            const int cy0 = std::max(cell_y(boxes_[i].lo.y) - 1, 0);
            const int cy1 = std::min(cell_y(boxes_[i].hi.y) + 1, ny_ - 1);
            for (int cy = cy0; cy <= cy1; ++cy) {
                for (int cx = cx0; cx <= cx1; ++cx) {
                    cells_[static_cast<size_t>(cy) * nx_ + cx].push_back(static_cast<int>(i));
                }
            }
        }
    }

    /// True when no face blocks the open segment (p, q). Faces whose plane
    /// contains an endpoint do not count as blockers, so segments that start
    /// or end on a reflecting face validate cleanly. One instance serves one
    /// search at a time: queries reuse per-face visit stamps.
    bool clear(const Vec3& p, const Vec3& q, TraceStats* stats) const {
        const Vec3 lo{std::min(p.x, q.x) - kEps, std::min(p.y, q.y) - kEps,
                      std::min(p.z, q.z) - kEps};
        const Vec3 hi{std::max(p.x, q.x) + kEps, std::max(p.y, q.y) + kEps,
                      std::max(p.z, q.z) + kEps};
        if (++gen_ == 0) {
            std::fill(stamp_.begin(), stamp_.end(), 0);
            gen_ = 1;
        }
        int cx = cell_x(p.x), cy = cell_y(p.y);
        const int qx = cell_x(q.x), qy = cell_y(q.y);
        const double dx = q.x - p.x, dy = q.y - p.y;
        const int sx = dx >= 0.0 ? 1 : -1;
        const int sy = dy >= 0.0 ? 1 : -1;
        constexpr double kInf = std::numeric_limits<double>::infinity();
        double tx_next = kInf, ty_next = kInf, tx_step = kInf, ty_step = kInf;
        if (dx != 0.0) {
            tx_next = (x0_ + (cx + (sx > 0 ? 1 : 0)) * cell_ - p.x) / dx;
            tx_step = cell_ / std::abs(dx);
        }
        if (dy != 0.0) {
            ty_next = (y0_ + (cy + (sy > 0 ? 1 : 0)) * cell_ - p.y) / dy;
            ty_step = cell_ / std::abs(dy);
        }
        for (int guard = 2 * (nx_ + ny_) + 4; guard-- > 0;) {
            for (int i : cells_[static_cast<size_t>(cy) * nx_ + cx]) {
                if (stamp_[static_cast<size_t>(i)] == gen_) continue;
                stamp_[static_cast<size_t>(i)] = gen_;
                const FaceBox& b = boxes_[static_cast<size_t>(i)];
                if (hi.x < b.lo.x || lo.x > b.hi.x || hi.y < b.lo.y || lo.y > b.hi.y ||
                    hi.z < b.lo.z || lo.z > b.hi.z) {
                    continue;
                }
                if (stats) ++stats->occlusion_tests;
                if (segment_face_intersection(p, q, scene_.faces()[static_cast<size_t>(i)]->poly)) {
                    return false;
                }
            }
            if (cx == qx && cy == qy) break;
            if (tx_next <= ty_next) {
                cx += sx;
                tx_next += tx_step;
            } else {
                cy += sy;
                ty_next += ty_step;
            }
            if (cx < 0 || cx >= nx_ || cy < 0 || cy >= ny_) break;
        }
        return true;
    }

  private:
    int cell_x(double x) const {
        return std::clamp(static_cast<int>((x - x0_) * inv_), 0, nx_ - 1);
    }
    int cell_y(double y) const {
        return std::clamp(static_cast<int>((y - y0_) * inv_), 0, ny_ - 1);
    }

    const Scene& scene_;
    std::vector<FaceBox> boxes_;
    std::vector<std::vector<int>> cells_;
    double x0_ = 0.0, y0_ = 0.0, cell_ = 1.0, inv_ = 1.0;
    int nx_ = 1, ny_ = 1;
    mutable std::vector<std::uint32_t> stamp_;
    mutable std::uint32_t gen_ = 0;
};

// ---------------------------------------------------------------------------
// Geometry resolution of one interaction sequence
// ---------------------------------------------------------------------------

/// The diffraction point is the Fermat point of the two-leg path: the point
/// of the edge minimising |from - p| + |p - to|. Splitting both endpoints
/// into axial and radial parts around the edge line turns the objective into
/// sqrt((t-a)^2 + ra^2) + sqrt((t-b)^2 + rb^2); its unconstrained minimum
/// divides [a, b] in the ratio of the radial distances (equal grazing
/// angles), and convexity makes clamping to the edge extent exact.
Vec3 fermat_point_on_edge(const Edge& edge, const Vec3& from, const Vec3& to) {
    const Vec3 d = edge.b - edge.a;
    const double len = norm(d);
    if (len <= kEps) return edge.a;
    const Vec3 u = d * (1.0 / len);
    const Vec3 fa = from - edge.a;
    const Vec3 ta = to - edge.a;
    const double a = dot(fa, u);
    const double b = dot(ta, u);
    const double ra = norm(fa - u * a);
    const double rb = norm(ta - u * b);
    double t;
    if (ra + rb <= kEps) {
        t = 0.5 * (a + b);  // both endpoints on the edge line: flat stretch
    } else {
        t = (a * rb + b * ra) / (ra + rb);
    }
    return edge.a + d * std::clamp(t / len, 0.0, 1.0);
}

/// Reusable buffers for sequence resolution; one instance per search keeps
/// the hot path free of allocations.
struct ResolveScratch {
    std::vector<Vec3> images;
    std::vector<Vec3> reflections;
};

/// Specular solution for a fixed reflector sequence (optionally capped by a
/// final diffraction), validated end to end: backward unfolding must place
/// every reflection point inside its face, and every segment must be
/// unblocked. nullopt when the sequence supports no valid path.
std::optional<Path> resolve_sequence(const Scene& scene, const Occluder& occ,
                                     const std::vector<Plane>& planes, ResolveScratch& scratch,
                                     const std::vector<int>& faces,
                                     const std::optional<Edge>& edge, const Vec3& tx,
                                     const Vec3& rx, TraceStats* stats) {
    if (stats) ++stats->sequences_checked;

    // Forward images of the source through the reflector cascade.
    std::vector<Vec3>& images = scratch.images;
    images.clear();
    images.push_back(tx);
    for (int idx : faces) {
        const Plane& plane = planes[static_cast<size_t>(idx)];
        if (plane.signed_distance(images.back()) <= kEps) return std::nullopt;
        images.push_back(mirror_point(images.back(), plane));
    }

    // The final leg ends on the receiver directly, or via the edge point that
    // minimises the unfolded length from the deepest image.
    Vec3 target = rx;
    std::optional<Vec3> dpoint;
    if (edge) {
        const Vec3 p = fermat_point_on_edge(*edge, images.back(), rx);
        if (distance(p, rx) <= kEps || distance(p, images.back()) <= kEps) return std::nullopt;
        dpoint = p;
        target = p;
    }

    // Backward unfolding: intersect towards successively shallower images.
    std::vector<Vec3>& reflections = scratch.reflections;
    reflections.assign(faces.size(), Vec3{});
    Vec3 cursor = target;
    for (size_t k = faces.size(); k-- > 0;) {
        const Face& f = scene.face(faces[k]);
        const auto hit =
            segment_plane_crossing(cursor, images[k + 1], planes[static_cast<size_t>(faces[k])]);
        if (!hit) return std::nullopt;
        if (!f.poly.contains(hit->second)) return std::nullopt;
        reflections[k] = hit->second;
        cursor = reflections[k];
    }

    std::vector<Vec3> pts;
    pts.reserve(faces.size() + 3);
    pts.push_back(tx);
    for (const Vec3& p : reflections) pts.push_back(p);
    if (dpoint) pts.push_back(*dpoint);
    pts.push_back(rx);

    double length = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        const double seg = distance(pts[i], pts[i + 1]);
        if (seg <= kEps) return std::nullopt;
        length += seg;
        if (!occ.clear(pts[i], pts[i + 1], stats)) return std::nullopt;
    }

    Path path;
    path.source = tx;
    path.receiver = rx;
    path.points = std::move(pts);
    path.length = length;
    path.delay = length / kSpeedOfLight;
    path.interactions.reserve(faces.size() + (dpoint ? 1 : 0));
    for (size_t k = 0; k < faces.size(); ++k) {
        path.interactions.push_back(
            {InteractionKind::Reflection, scene.face(faces[k]).id, reflections[k]});
    }
    if (dpoint) {
        path.interactions.push_back({InteractionKind::Diffraction, edge->id, *dpoint});
    }
    if (stats) ++stats->paths_found;
    return path;
}

}  // namespace

// ---------------------------------------------------------------------------
// Image-method search engine
//
// Both tracers run the same depth-first expansion of mirrored sources and the
// same per-candidate validation, so they find identical path sets. They
// differ in how the tree is grown. The brute-force engine is the
// conventional image method: it mirrors across every face other than the
// immediate repeat, with no visibility knowledge, leaving all rejection to
// candidate resolution — the tree has N·(N−1)^(d−1) nodes at depth d. The
// accelerated engine prunes children whose parent image lies behind the
// candidate face and restricts sequences of length >= 2 to the face chains
// recorded in the matrix; subtrees that contain an oblique face fall back to
// the full expansion, since the matrix does not cover oblique geometry.
// ---------------------------------------------------------------------------

namespace detail {

/// Recorded reflector chains, indexed for O(1) expansion: a packed prefix key
/// maps to the faces that may extend it. Oblique faces sit outside the matrix
/// and are always admissible.
struct ChainFilter {
    std::vector<int> obliques;
    std::unordered_map<std::uint64_t, std::vector<int>> continuations;
};

}  // namespace detail

namespace {

/// 21 bits per reflector slot: prefixes hold at most three faces (reflection
/// order is capped at four), so the packed key never overflows 64 bits.
constexpr int kSlotBits = 21;

std::uint64_t extend_key(std::uint64_t key, int face_idx) {
    return (key << kSlotBits) | static_cast<std::uint64_t>(face_idx + 1);
}

std::unique_ptr<const detail::ChainFilter> build_chain_filter(const Scene& scene,
                                                              const InterVisMatrix& matrix,
                                                              int max_refl) {
    auto filter = std::make_unique<detail::ChainFilter>();
    for (const Face* f : scene.faces()) {
        if (f->orientation == Orientation::Oblique) filter->obliques.push_back(f->index);
    }
    for (const InterVisEntry& e : matrix.entries()) {
        const auto& chain = e.relation.chain;
        if (static_cast<int>(chain.size()) > max_refl || chain.size() < 2) continue;
        std::uint64_t key = 0;
        for (size_t i = 0; i + 1 < chain.size(); ++i) {
            key = extend_key(key, scene.face(chain[i]).index);
        }
        filter->continuations[key].push_back(scene.face(chain.back()).index);
    }
    for (auto& [key, kids] : filter->continuations) {
        std::sort(kids.begin(), kids.end());
        kids.erase(std::unique(kids.begin(), kids.end()), kids.end());
    }
    return filter;
}

class Engine {
  public:
    Engine(const Scene& scene, const Vec3& tx, const Vec3& rx, int max_refl,
           bool allow_diffraction, const detail::ChainFilter* filter, TraceStats* stats)
        : scene_(scene),
          occ_(scene),
          planes_(face_planes(scene)),
          tx_(tx),
          rx_(rx),
          max_refl_(max_refl),
          filter_(filter),
          prune_images_(filter != nullptr),
          stats_(stats) {
        if (distance(tx, rx) <= kEps) {
            throw PlacementError("transmitter and receiver coincide");
        }
        if (scene.inside_building(tx)) {
            throw PlacementError("transmitter lies inside a building volume");
        }
        if (scene.inside_building(rx)) {
            throw PlacementError("receiver lies inside a building volume");
        }
        all_faces_.resize(scene.faces().size());
        for (size_t i = 0; i < all_faces_.size(); ++i) all_faces_[i] = static_cast<int>(i);
        if (allow_diffraction) edge_ = closest_diffraction_edge(rx, scene);
    }

    std::vector<Path> run() {
        attempt({});
        if (max_refl_ > 0) {
            std::vector<int> seq;
            expand(seq, 0, tx_, filter_ != nullptr);
        }
        std::sort(out_.begin(), out_.end(),
                  [](const Path& a, const Path& b) { return a.identity() < b.identity(); });
        return std::move(out_);
    }

  private:
    /// Try to close the current reflector sequence into paths: one ending
    /// straight at the receiver, one ending at the diffraction edge.
    void attempt(const std::vector<int>& seq) {
        if (auto p = resolve_sequence(scene_, occ_, planes_, scratch_, seq, std::nullopt, tx_, rx_,
                                      stats_)) {
            out_.push_back(std::move(*p));
        }
        if (edge_) {
            if (auto p =
                    resolve_sequence(scene_, occ_, planes_, scratch_, seq, edge_, tx_, rx_, stats_)) {
                out_.push_back(std::move(*p));
            }
        }
    }

    /// `key` packs the current sequence for continuation lookup; it is only
    /// meaningful while `filtered` holds. Depth-one fan-out runs over every
    /// face even when filtered: first-bounce admissibility depends on the
    /// transmitter, which the matrix does not know.
    void expand(std::vector<int>& seq, std::uint64_t key, const Vec3& image, bool filtered) {
        const bool have_prefix = !seq.empty();
        const std::vector<int>* pool = &all_faces_;
        const std::vector<int>* extra = nullptr;
        if (filtered && have_prefix) {
            static const std::vector<int> kNone;
            const auto it = filter_->continuations.find(key);
            pool = it != filter_->continuations.end() ? &it->second : &kNone;
            extra = &filter_->obliques;
        }
        auto visit = [&](int idx) {
            if (have_prefix && idx == seq.back()) return;
            const Face& f = scene_.face(idx);
            const Plane& plane = planes_[static_cast<size_t>(idx)];
            if (prune_images_ && plane.signed_distance(image) <= kEps) {
                return;  // image behind the face: no physical reflection
            }
            seq.push_back(idx);
            if (stats_) ++stats_->nodes_expanded;
            attempt(seq);
            if (static_cast<int>(seq.size()) < max_refl_) {
                const bool child_filtered = filtered && f.orientation != Orientation::Oblique;
                expand(seq, extend_key(key, idx), mirror_point(image, plane), child_filtered);
            }
            seq.pop_back();
        };
        for (int idx : *pool) visit(idx);
        if (extra) {
            for (int idx : *extra) visit(idx);
        }
    }

    const Scene& scene_;
    Occluder occ_;
    std::vector<Plane> planes_;
    std::vector<int> all_faces_;
    Vec3 tx_, rx_;
    int max_refl_;
    const detail::ChainFilter* filter_;
    bool prune_images_ = false;
    TraceStats* stats_;
    std::optional<Edge> edge_;
    std::vector<Path> out_;
    ResolveScratch scratch_;
};

}  // namespace

std::string Path::identity() const {
    if (interactions.empty()) return "LOS";
    std::string id;
    for (size_t i = 0; i < interactions.size(); ++i) {
        if (i) id += '/';
        id += kind_prefix(interactions[i].kind) + interactions[i].id;
    }
    return id;
}

std::vector<ImageTreeNode> image_tree(const Scene& scene, const Vec3& source, int max_depth) {
    std::vector<ImageTreeNode> nodes;

    struct Rec {
        const Scene& scene;
        std::vector<ImageTreeNode>& nodes;
        int max_depth;
        void operator()(int parent, int last_face, const Vec3& image, int depth) {
            if (depth >= max_depth) return;
            for (const Face* f : scene.faces()) {
                if (f->index == last_face) continue;
                const Plane plane = f->poly.plane();
                if (plane.signed_distance(image) <= kEps) continue;
                const Vec3 next = mirror_point(image, plane);
                ImageTreeNode node;
                node.face = f->id;
                node.image = next;
                node.parent = parent;
                node.depth = depth + 1;
                nodes.push_back(node);
                const int self = static_cast<int>(nodes.size()) - 1;
                (*this)(self, f->index, next, depth + 1);
            }
        }
    };
    Rec rec{scene, nodes, max_depth};
    rec(-1, -1, source, 0);
    return nodes;
}

std::vector<Path> brute_force_trace(const Scene& scene, const Vec3& tx, const Vec3& rx,
                                    int max_refl, bool allow_diffraction, TraceStats* stats) {
    if (max_refl < 0) throw VisibilityError("reflection order must be non-negative");
    Engine engine(scene, tx, rx, max_refl, allow_diffraction, nullptr, stats);
    return engine.run();
}

TraceAccelerator::TraceAccelerator(const Scene& scene, const InterVisMatrix& matrix, int max_refl)
    : scene_(&scene), max_refl_(max_refl) {
    if (max_refl < 0) throw VisibilityError("reflection order must be non-negative");
    if (max_refl > matrix.max_order()) {
        throw VisibilityError("matrix order " + std::to_string(matrix.max_order()) +
                              " is lower than the requested reflection order " +
                              std::to_string(max_refl));
    }
    filter_ = build_chain_filter(scene, matrix, max_refl);
}

TraceAccelerator::~TraceAccelerator() = default;
TraceAccelerator::TraceAccelerator(TraceAccelerator&&) noexcept = default;
TraceAccelerator& TraceAccelerator::operator=(TraceAccelerator&&) noexcept = default;

std::vector<Path> TraceAccelerator::trace(const Vec3& tx, const Vec3& rx, bool allow_diffraction,
                                          TraceStats* stats) const {
    Engine engine(*scene_, tx, rx, max_refl_, allow_diffraction, filter_.get(), stats);
    return engine.run();
}

std::vector<Path> accelerated_trace(const Scene& scene, const InterVisMatrix& matrix,
                                    const Vec3& tx, const Vec3& rx, int max_refl,
                                    bool allow_diffraction, TraceStats* stats) {
    const TraceAccelerator accel(scene, matrix, max_refl);
    return accel.trace(tx, rx, allow_diffraction, stats);
}

// ---------------------------------------------------------------------------
// Dynamic runs
// ---------------------------------------------------------------------------

namespace {

/// Identity of a traced path in face-index form, for cheap re-solving.
struct SequenceKey {
    std::vector<int> faces;
    std::optional<Edge> edge;
};

std::vector<SequenceKey> sequence_keys(const Scene& scene, const std::vector<Path>& paths) {
    std::map<std::string, const Edge*> edge_by_id;
    for (const Edge& e : scene.edges()) edge_by_id[e.id] = &e;
    std::vector<SequenceKey> keys;
    keys.reserve(paths.size());
    for (const Path& p : paths) {
        SequenceKey key;
        for (const Interaction& ia : p.interactions) {
            if (ia.kind == InteractionKind::Reflection) {
                key.faces.push_back(scene.face(ia.id).index);
            } else {
                key.edge = *edge_by_id.at(ia.id);
            }
        }
        keys.push_back(std::move(key));
    }
    return keys;
}

std::vector<Path> resolve_keys(const Scene& scene, const Occluder& occ,
                               const std::vector<Plane>& planes,
                               const std::vector<SequenceKey>& keys, const Vec3& tx,
                               const Vec3& rx) {
    std::vector<Path> out;
    out.reserve(keys.size());
    ResolveScratch scratch;
    for (const SequenceKey& key : keys) {
        if (auto p = resolve_sequence(scene, occ, planes, scratch, key.faces, key.edge, tx, rx,
                                      nullptr)) {
            out.push_back(std::move(*p));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const Path& a, const Path& b) { return a.identity() < b.identity(); });
    return out;
}

/// Arc length reached at wall-clock time t (inverse of Trajectory::time_at).
double arc_at_time(const Trajectory& traj, double t) {
    double lo = 0.0, hi = traj.total_length();
    if (t <= 0.0) return lo;
    if (t >= traj.duration()) return hi;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (traj.time_at(mid) < t) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

DynamicResult dynamic_trace(const Scene& scene, const InterVisMatrix& matrix,
                            const Trajectory& traj, const Vec3& rx, int max_refl,
                            bool allow_diffraction, double sample_step) {
    if (sample_step <= 0) throw VisibilityError("sampling step must be positive");
    DynamicResult res;
    const int table_order = std::clamp(max_refl, 1, matrix.max_order());
    res.table = trajectory_vis_table(traj, matrix, scene, table_order);
    res.coherence = coherence_times(res.table, traj);

    const double total = traj.total_length();
    std::vector<double> bounds{0.0};
    for (const CoherenceSegment& seg : res.coherence.segments) {
        bounds.push_back(bounds.back() + seg.d);
    }
    bounds.back() = total;

    const TraceAccelerator accel(scene, matrix, max_refl);
    const Occluder occ(scene);
    const std::vector<Plane> planes = face_planes(scene);
    for (size_t l = 0; l + 1 < bounds.size(); ++l) {
        const double s0 = bounds[l];
        const double s1 = bounds[l + 1];
        std::vector<SequenceKey> keys;
        bool first = true;
        auto take_sample = [&](double s) {
            DynamicSample sample;
            sample.s = s;
            sample.t = traj.time_at(s);
            sample.segment = static_cast<int>(l) + 1;
            const Vec3 pos = traj.position_at(s);
            if (first) {
                sample.retraced = true;
                sample.paths = accel.trace(pos, rx, allow_diffraction);
                keys = sequence_keys(scene, sample.paths);
                ++res.full_traces;
                first = false;
            } else {
                sample.paths = resolve_keys(scene, occ, planes, keys, pos, rx);
            }
            res.samples.push_back(std::move(sample));
        };
        for (double s = s0; s < s1 - 1e-9; s += sample_step) take_sample(s);
        if (l + 2 == bounds.size()) take_sample(total);
    }
    return res;
}

DynamicResult dynamic_trace(const Scene& scene, const InterVisMatrix& matrix,
                            const Trajectory& traj_tx, const Trajectory& traj_rx, int max_refl,
                            bool allow_diffraction, double sample_step) {
    if (sample_step <= 0) throw VisibilityError("sampling step must be positive");
    DynamicResult res;
    const int table_order = std::clamp(max_refl, 1, matrix.max_order());
    res.table = trajectory_vis_table(traj_tx, matrix, scene, table_order);
    std::vector<MobileVisEntry> table_rx =
        trajectory_vis_table(traj_rx, matrix, scene, table_order);

    // Retrace whenever either mover crosses one of its own visibility
    // boundaries; between boundaries both endpoints move and the same
    // sequences are re-solved.
    const double horizon = std::min(traj_tx.duration(), traj_rx.duration());
    std::vector<double> times{0.0, horizon};
    auto add_boundaries = [&](const std::vector<MobileVisEntry>& table, const Trajectory& traj) {
        const CoherenceResult own = coherence_times(table, traj);
        double s = 0.0;
        for (const CoherenceSegment& seg : own.segments) {
            s += seg.d;
            const double t = traj.time_at(s);
            if (t > 1e-9 && t < horizon - 1e-9) times.push_back(t);
        }
    };
    add_boundaries(res.table, traj_tx);
    add_boundaries(table_rx, traj_rx);
    res.coherence =
        coherence_times(res.table, traj_tx, std::make_pair(std::move(table_rx), traj_rx));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(),
                            [](double a, double b) { return std::abs(a - b) <= 1e-9; }),
                times.end());

    const TraceAccelerator accel(scene, matrix, max_refl);
    const Occluder occ(scene);
    const std::vector<Plane> planes = face_planes(scene);
    for (size_t l = 0; l + 1 < times.size(); ++l) {
        const double t0 = times[l];
        const double t1 = times[l + 1];
        std::vector<SequenceKey> keys;
        bool first = true;
        double t = t0;
        while (t < t1 - 1e-9 || (l + 2 == times.size() && t <= t1 + 1e-9)) {
            const double s_tx = arc_at_time(traj_tx, t);
            const double s_rx = arc_at_time(traj_rx, t);
            const Vec3 p_tx = traj_tx.position_at(s_tx);
            const Vec3 p_rx = traj_rx.position_at(s_rx);
            DynamicSample sample;
            sample.s = s_tx;
            sample.t = t;
            sample.segment = static_cast<int>(l) + 1;
            if (first) {
                sample.retraced = true;
                sample.paths = accel.trace(p_tx, p_rx, allow_diffraction);
                keys = sequence_keys(scene, sample.paths);
                ++res.full_traces;
                first = false;
            } else {
                sample.paths = resolve_keys(scene, occ, planes, keys, p_tx, p_rx);
            }
            res.samples.push_back(std::move(sample));
            const double speed = std::max(traj_tx.speed_at(s_tx), 1e-9);
            const double dt = sample_step / speed;
            if (l + 2 == times.size() && t < t1 - 1e-9 && t + dt > t1 - 1e-9) {
                t = t1;  // close the run exactly at the horizon
            } else {
                t += dt;
            }
        }
    }
    return res;
}

std::string path_dump(const std::vector<Path>& paths) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os << "paths " << paths.size() << "\n";
    for (size_t i = 0; i < paths.size(); ++i) {
        const Path& p = paths[i];
        os.precision(9);
        os << "path " << i << " " << p.identity() << "\n";
        os << "  length_m " << p.length << "\n";
        os.precision(6);
        os << "  delay_ns " << p.delay * 1e9 << "\n";
        os.precision(9);
        for (const Vec3& v : p.points) {
            os << "  vertex " << v.x << " " << v.y << " " << v.z << "\n";
        }
    }
    return os.str();
}

}  // namespace rt
