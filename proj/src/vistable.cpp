// SPDX-License-Identifier: Apache-2.0

#include <rt/vistable.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace rt {

namespace {

constexpr double kFullCover = 1e-9;   // param slack for "covers the whole segment"
constexpr double kEmptyCover = 1e-12; // param intervals shorter than this are empty

// Coordinate dropped by project() for each working plane.
double dropped_coord(const Vec3& p, PlaneTag plane) {
    switch (plane) {
        case PlaneTag::XY: return p.z;
        case PlaneTag::YZ: return p.x;
        case PlaneTag::XZ: return p.y;
    }
    throw std::logic_error("bad plane tag");
}

std::string building_of(const Face& f) { return f.building.empty() ? "ground" : f.building; }

// ---------------------------------------------------------------------------
// Sightlines
// ---------------------------------------------------------------------------

bool sightline_clear(const Vec3& a, const Vec3& b, const Scene& scene, int skip_index) {
    for (const Face* f : scene.faces()) {
        if (f->index == skip_index) continue;
        if (segment_face_intersection(a, b, f->poly)) return false;
    }
    return true;
}

// Buildings whose faces block any of a small set of probe sightlines from the
// source toward the target face. Used only to attribute range boundaries.
std::set<std::string> probe_blockers(const Vec3& source, const Face& target, const Scene& scene) {
    std::set<std::string> out;
    std::vector<Vec3> probes = target.poly.pts;
    probes.push_back(target.poly.centroid());
    for (const Vec3& p : probes) {
        for (const Face* f : scene.faces()) {
            if (f->index == target.index) continue;
            if (segment_face_intersection(source, p, f->poly)) out.insert(building_of(*f));
        }
    }
    return out;
}

std::set<std::string> segment_blockers(const Vec3& a, const Vec3& b, const Scene& scene) {
    std::set<std::string> out;
    for (const Face* f : scene.faces()) {
        if (segment_face_intersection(a, b, f->poly)) out.insert(building_of(*f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Face parameterisation in one working plane
//
// A face that projects to a segment in a working plane extends along the
// dropped axis. Points of the face are addressed by (u, s): u in [0,1] along
// the projected segment, s the dropped coordinate. The face polygon maps to a
// convex polygon in (u, s).
// ---------------------------------------------------------------------------

struct FaceParam {
    PlaneSegment seg;
    double seg_len = 0.0;
    std::vector<Vec2> poly_us;  // face polygon in (u, s) coordinates
};

std::optional<FaceParam> face_param(const Face& face, PlaneTag plane) {
    auto seg = plane_segment(face, plane);
    if (!seg) return std::nullopt;
    FaceParam fp;
    fp.seg = *seg;
    const Vec2 d = seg->b - seg->a;
    const double len2 = dot(d, d);
    if (len2 <= kEps * kEps) return std::nullopt;
    fp.seg_len = std::sqrt(len2);
    for (const Vec3& v : face.poly.pts) {
        const Vec2 q = project(v, plane);
        fp.poly_us.push_back({dot(q - seg->a, d) / len2, dropped_coord(v, plane)});
    }
    return fp;
}

// Dropped-axis span [s0, s1] of the face at column u, empty when the column
// misses the polygon.
std::optional<std::array<double, 2>> column_span(const std::vector<Vec2>& poly, double u) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        const double da = a.x - u, db = b.x - u;
        auto take = [&](double s) {
            if (!any) {
                lo = hi = s;
                any = true;
            } else {
                lo = std::min(lo, s);
                hi = std::max(hi, s);
            }
        };
        if (std::abs(da) <= 1e-12) take(a.y);
        if ((da < 0.0) != (db < 0.0) && std::abs(da - db) > 1e-15) {
            take(a.y + (b.y - a.y) * (da / (da - db)));
        }
    }
    if (!any) return std::nullopt;
    return std::array<double, 2>{lo, hi};
}

Vec3 face_point(const FaceParam& fp, PlaneTag plane, double u, double s) {
    const Vec2 q = fp.seg.a + (fp.seg.b - fp.seg.a) * u;
    return lift(q, plane, s);
}

// ---------------------------------------------------------------------------
// Source-visible parameter intervals of a face in one working plane.
// Columns across the projected segment are tested with several samples along
// the dropped axis; interval boundaries are then bisected, which pins straight
// shadow lines (e.g. a wall-top silhouette) to machine precision.
// ---------------------------------------------------------------------------

std::vector<std::array<double, 2>> visible_intervals(const Vec3& source, const Face& face,
                                                     const FaceParam& fp, PlaneTag plane,
                                                     const Scene& scene) {
    constexpr int kColumns = 65;
    constexpr int kTransverse = 7;

    auto col_vis = [&](double u) {
        const double uc = std::clamp(u, 0.0, 1.0);
        auto span = column_span(fp.poly_us, uc);
        if (!span) return false;
        const double s0 = (*span)[0], s1 = (*span)[1];
        const double inset = (s1 - s0) * 1e-6;
        for (int j = 0; j < kTransverse; ++j) {
            const double f = double(j) / (kTransverse - 1);
            const double s = std::min(s1 - inset, std::max(s0 + inset, s0 + (s1 - s0) * f));
            const Vec3 p = face_point(fp, plane, uc, s);
            if (sightline_clear(source, p, scene, face.index)) return true;
        }
        return false;
    };

    std::vector<char> vis(kColumns);
    for (int i = 0; i < kColumns; ++i) vis[i] = col_vis(double(i) / (kColumns - 1)) ? 1 : 0;

    auto refine = [&](double lo, double hi, bool lo_vis) {
        for (int it = 0; it < 50 && hi - lo > 1e-15; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (col_vis(mid) == lo_vis)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };

    std::vector<std::array<double, 2>> out;
    const double step = 1.0 / (kColumns - 1);
    int i = 0;
    while (i < kColumns) {
        if (!vis[i]) {
            ++i;
            continue;
        }
        double start = double(i) / (kColumns - 1);
        if (i > 0) start = refine(start - step, start, false);
        int j = i;
        while (j + 1 < kColumns && vis[j + 1]) ++j;
        double end = double(j) / (kColumns - 1);
        if (j + 1 < kColumns) end = refine(end, end + step, true);
        out.push_back({start, end});
        i = j + 1;
    }
    return out;
}

// Boundary-ray angle at one segment endpoint: measured from the direction
// toward the other endpoint, opening toward the outward normal.
double boundary_angle(const Vec2& at, const Vec2& other, const Vec2& outward, const Vec2& image) {
    const Vec2 ref = other - at;
    const Vec2 ray = at - image;
    if (norm(ray) <= kEps || norm(ref) <= kEps) return 0.0;
    return clamp_visibility_angle(oriented_angle_deg(ref, outward, ray));
}

Vec2 mirror_across_segment(const Vec2& q, const Vec2& a, const Vec2& b) {
    const Vec2 d = b - a;
    const double len2 = dot(d, d);
    const Vec2 foot = a + d * (dot(q - a, d) / len2);
    return foot * 2.0 - q;
}

// ---------------------------------------------------------------------------
// Beam coverage: which part of a target segment lies inside the wedge of rays
// leaving a reflective window. The wedge apex is the mirrored source; the
// window [wa, wb] lies on the reflector line with outward normal `outward`.
// Each wedge condition is affine in the target parameter, so the reachable
// interval is exact.
// ---------------------------------------------------------------------------

struct WindowBeam {
    Vec2 apex;
    Vec2 wa, wb;
    Vec2 outward;
};

HigherOrderResult beam_coverage(const WindowBeam& beam, const Vec2& qa, const Vec2& qb) {
    HigherOrderResult res;
    const Vec2 ea = beam.wa - beam.apex;
    const Vec2 eb = beam.wb - beam.apex;
    const double inner = cross(ea, eb);
    const double scale = norm(ea) * norm(eb);
    if (std::abs(inner) <= 1e-14 * std::max(scale, 1.0)) {
        return res;  // degenerate window: measure-zero beam
    }
    const double sgn = inner > 0.0 ? 1.0 : -1.0;

    double lo = 0.0, hi = 1.0;
    auto apply = [&](double c0, double c1) {
        // constraint c0 + t * c1 >= 0 on [lo, hi]
        if (std::abs(c1) <= 1e-15 * (std::abs(c0) + 1.0)) {
            if (c0 < 0.0) {
                lo = 1.0;
                hi = 0.0;
            }
            return;
        }
        const double t = -c0 / c1;
        if (c1 > 0.0)
            lo = std::max(lo, t);
        else
            hi = std::min(hi, t);
    };

    const Vec2 dq = qb - qa;
    // Front of the reflector line.
    apply(dot(qa - beam.wa, beam.outward), dot(dq, beam.outward));
    // Inside the boundary ray through wa: sgn * cross(ea, q - apex) >= 0.
    apply(sgn * cross(ea, qa - beam.apex), sgn * cross(ea, dq));
    // Inside the boundary ray through wb: -sgn * cross(eb, q - apex) >= 0.
    apply(-sgn * cross(eb, qa - beam.apex), -sgn * cross(eb, dq));

    if (hi - lo <= kEmptyCover) return res;
    res.window = {lo, hi};
    if (lo <= kFullCover && hi >= 1.0 - kFullCover) {
        res.verdict = ChainVerdict::Full;
        res.window = {0.0, 1.0};
    } else {
        res.verdict = ChainVerdict::Partial;
        const double t = lo > kFullCover ? lo : hi;
        res.clip_point = qa + dq * t;
    }
    return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// Illuminated region
// ---------------------------------------------------------------------------

const PlaneIllumination* IlluminatedRegion::plane(PlaneTag tag) const {
    for (const auto& p : planes) {
        if (p.plane == tag) return &p;
    }
    return nullptr;
}

std::optional<IlluminatedRegion> illuminated_region(const Vec3& source, const Face& face,
                                                    const Scene& scene) {
    const Plane plane3 = face.poly.plane();
    const double dist = plane3.signed_distance(source);
    if (std::abs(dist) <= kEps) {
        throw VisibilityError("source lies on the plane of face '" + face.id + "'");
    }
    if (dist < 0.0) return std::nullopt;  // back-facing

    IlluminatedRegion region;
    region.face = face.id;
    region.source = source;

    for (PlaneTag tag : {PlaneTag::XY, PlaneTag::YZ, PlaneTag::XZ}) {
        auto fp = face_param(face, tag);
        if (!fp) continue;

        const auto intervals = visible_intervals(source, face, *fp, tag, scene);
        if (intervals.empty()) return std::nullopt;  // fully hidden

        // Largest visible interval carries the effective sub-segment.
        auto best = std::max_element(intervals.begin(), intervals.end(),
                                     [](const auto& a, const auto& b) {
                                         return a[1] - a[0] < b[1] - b[0];
                                     });

        PlaneIllumination pi;
        pi.plane = tag;
        pi.face_a = fp->seg.a;
        pi.face_b = fp->seg.b;
        pi.outward = fp->seg.normal;
        pi.image = mirror_across_segment(project(source, tag), fp->seg.a, fp->seg.b);
        pi.sub = *best;
        const Vec2 dir = fp->seg.b - fp->seg.a;
        pi.sub_a = fp->seg.a + dir * pi.sub[0];
        pi.sub_b = fp->seg.a + dir * pi.sub[1];
        pi.alpha_full = boundary_angle(pi.face_a, pi.face_b, pi.outward, pi.image);
        pi.beta_full = boundary_angle(pi.face_b, pi.face_a, pi.outward, pi.image);
        pi.alpha = boundary_angle(pi.sub_a, pi.sub_b, pi.outward, pi.image);
        pi.beta = boundary_angle(pi.sub_b, pi.sub_a, pi.outward, pi.image);
        pi.clipped = pi.sub[0] > kFullCover || pi.sub[1] < 1.0 - kFullCover;
        if (pi.sub[0] > kFullCover) pi.clip_points.push_back(pi.sub_a);
        if (pi.sub[1] < 1.0 - kFullCover) pi.clip_points.push_back(pi.sub_b);
        region.planes.push_back(pi);
    }
    if (region.planes.empty()) return std::nullopt;
    return region;
}

// ---------------------------------------------------------------------------
// Higher-order visibility
// ---------------------------------------------------------------------------

HigherOrderResult higher_order_visibility(const IlluminatedRegion& region,
                                          const InterVisEntry& entry, const Scene& scene) {
    if (entry.ref != region.face) {
        throw VisibilityError("entry reference '" + entry.ref + "' does not match region face '" +
                              region.face + "'");
    }
    const PlaneIllumination* rec = region.plane(entry.relation.plane);
    if (!rec) {
        throw VisibilityError("region for face '" + region.face + "' has no record in the " +
                              std::string(plane_name(entry.relation.plane)) + " plane");
    }
    const Face& aim = scene.face(entry.aim);
    auto aim_seg = plane_segment(aim, entry.relation.plane);
    if (!aim_seg) {
        throw VisibilityError("aim face '" + entry.aim + "' has no segment in the " +
                              std::string(plane_name(entry.relation.plane)) + " plane");
    }
    const WindowBeam beam{rec->image, rec->sub_a, rec->sub_b, rec->outward};
    return beam_coverage(beam, aim_seg->a, aim_seg->b);
}

// ---------------------------------------------------------------------------
// Per-point visibility table
// ---------------------------------------------------------------------------

namespace {

// Beam cascade state after reflecting off the chain's tail face.
struct BeamState {
    Vec3 image3;  // source mirrored through every reflector so far
    std::map<PlaneTag, std::array<Vec2, 2>> windows;  // per-plane window on the tail face
    std::map<PlaneTag, bool> full_by_plane;  // whole segment reflects in this plane so far
};

class TableBuilder {
  public:
    TableBuilder(const Vec3& source, const InterVisMatrix& matrix, const Scene& scene)
        : source_(source), matrix_(matrix), scene_(scene) {}

    const std::optional<IlluminatedRegion>& region(const std::string& face_id) {
        auto it = regions_.find(face_id);
        if (it != regions_.end()) return it->second;
        std::optional<IlluminatedRegion> reg;
        try {
            reg = illuminated_region(source_, scene_.face(face_id), scene_);
        } catch (const VisibilityError&) {
            reg.reset();  // source on the face plane: nothing is illuminated
        }
        return regions_.emplace(face_id, std::move(reg)).first->second;
    }

    // Display name of a face in one plane: fixture label, primed when the
    // source sees only part of it.
    std::string display(const std::string& face_id, PlaneTag plane) {
        const Face& f = scene_.face(face_id);
        std::string name = f.label(plane);
        const auto& reg = region(face_id);
        if (reg) {
            const PlaneIllumination* rec = reg->plane(plane);
            if (rec && rec->clipped) name += "'";
        }
        return name;
    }

    // Cascade state after the source beam reflects off every face of the
    // chain in order; nullopt when some step is unreachable.
    const std::optional<BeamState>& reach(const std::vector<std::string>& chain) {
        auto it = memo_.find(chain);
        if (it != memo_.end()) return it->second;

        std::optional<BeamState> state;
        if (chain.size() == 1) {
            const auto& reg = region(chain.front());
            if (reg) {
                BeamState st;
                const Face& f = scene_.face(chain.front());
                st.image3 = mirror_point(source_, f.poly.plane());
                for (const auto& pi : reg->planes) {
                    st.windows[pi.plane] = {pi.sub_a, pi.sub_b};
                    st.full_by_plane[pi.plane] = !pi.clipped;
                }
                state = std::move(st);
            }
        } else {
            std::vector<std::string> prefix(chain.begin(), chain.end() - 1);
            const auto& prev = reach(prefix);
            if (prev) state = step(*prev, prefix.back(), chain.back());
        }
        return memo_.emplace(chain, std::move(state)).first->second;
    }

  private:
    std::optional<BeamState> step(const BeamState& state, const std::string& from,
                                  const std::string& to) {
        const Face& f = scene_.face(from);
        const Face& g = scene_.face(to);
        BeamState next;
        for (PlaneTag plane : required_planes(f, g)) {
            const InterVisEntry* pair = matrix_.find(1, from, to, plane);
            if (!pair) continue;
            auto fseg = plane_segment(f, plane);
            auto gseg = plane_segment(g, plane);
            if (!fseg || !gseg) continue;

            std::array<Vec2, 2> window;
            bool was_full = true;
            auto it = state.windows.find(plane);
            if (it != state.windows.end()) {
                window = it->second;
                auto fit = state.full_by_plane.find(plane);
                was_full = fit != state.full_by_plane.end() && fit->second;
            } else {
                // The beam was never constrained in this plane before; the
                // whole face acts as the window.
                window = {fseg->a, fseg->b};
            }
            const Vec2 apex = project(state.image3, plane);
            const WindowBeam beam{apex, window[0], window[1], fseg->normal};
            const HigherOrderResult cov = beam_coverage(beam, gseg->a, gseg->b);
            if (cov.verdict == ChainVerdict::None) return std::nullopt;
            const Vec2 dq = gseg->b - gseg->a;
            next.windows[plane] = {gseg->a + dq * cov.window[0], gseg->a + dq * cov.window[1]};
            next.full_by_plane[plane] = was_full && cov.verdict == ChainVerdict::Full;
        }
        if (next.windows.empty()) return std::nullopt;
        next.image3 = mirror_point(state.image3, g.poly.plane());
        return next;
    }

    const Vec3 source_;
    const InterVisMatrix& matrix_;
    const Scene& scene_;
    std::map<std::string, std::optional<IlluminatedRegion>> regions_;
    std::map<std::vector<std::string>, std::optional<BeamState>> memo_;
};

}  // namespace

std::vector<VisTableEntry> point_vis_table(const Vec3& source, const InterVisMatrix& matrix,
                                           const Scene& scene, int max_order) {
    if (max_order < 1) throw VisibilityError("max_order must be at least 1");
    if (matrix.max_order() < max_order) {
        throw VisibilityError("matrix holds orders up to " + std::to_string(matrix.max_order()) +
                              ", requested " + std::to_string(max_order));
    }

    TableBuilder builder(source, matrix, scene);
    std::vector<VisTableEntry> rows;

    for (const InterVisEntry& e : matrix.entries()) {
        if (e.order > max_order) continue;
        const auto& chain_full = e.relation.chain;
        if (chain_full.size() < 2) continue;
        std::vector<std::string> reflectors(chain_full.begin(), chain_full.end() - 1);
        const auto& state = builder.reach(reflectors);
        if (!state) continue;

        VisTableEntry row;
        row.order = e.order;
        row.ref = reflectors.back();
        row.aim = e.aim;
        row.plane = e.relation.plane;
        row.chain = reflectors;
        row.parent = reflectors.size() >= 2 ? reflectors[reflectors.size() - 2]
                                            : std::string("transmitter");
        row.parent_display = reflectors.size() >= 2
                                 ? builder.display(row.parent, e.relation.plane)
                                 : std::string("transmitter");
        row.ref_display = builder.display(row.ref, e.relation.plane);
        row.aim_display = builder.display(row.aim, e.relation.plane);
        auto fit = state->full_by_plane.find(e.relation.plane);
        const bool plane_full = fit != state->full_by_plane.end() && fit->second;
        row.verdict = plane_full ? ChainVerdict::Full : ChainVerdict::Partial;
        rows.push_back(std::move(row));
    }

    std::sort(rows.begin(), rows.end(), [](const VisTableEntry& a, const VisTableEntry& b) {
        return std::tie(a.order, a.chain, a.aim, a.plane) <
               std::tie(b.order, b.chain, b.aim, b.plane);
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Closest diffraction edge
// ---------------------------------------------------------------------------

namespace {

Vec3 closest_point_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 d = b - a;
    const double len2 = dot(d, d);
    if (len2 <= kEps * kEps) return a;
    const double t = std::clamp(dot(p - a, d) / len2, 0.0, 1.0);
    return a + d * t;
}

}  // namespace

std::optional<Edge> closest_diffraction_edge(const Vec3& receiver, const Scene& scene,
                                             const InterVisMatrix& matrix) {
    (void)matrix;  // candidates come from the scene's edge list
    return closest_diffraction_edge(receiver, scene);
}

std::optional<Edge> closest_diffraction_edge(const Vec3& receiver, const Scene& scene) {
    const Edge* best = nullptr;
    double best_dist = 0.0;
    for (const Edge& e : scene.edges()) {
        const Vec3 cp = closest_point_on_segment(receiver, e.a, e.b);
        const double d = distance(receiver, cp);
        if (best && d > best_dist + kEps) continue;
        if (!sightline_clear(receiver, cp, scene, -1)) continue;
        if (!best || d < best_dist - kEps ||
            (std::abs(d - best_dist) <= kEps && e.id < best->id)) {
            best = &e;
            best_dist = d;
        }
    }
    if (!best) return std::nullopt;
    return *best;
}

// ---------------------------------------------------------------------------
// Plan-view membership
//
// Pure two-dimensional visibility in the horizontal working plane: vertical
// faces act as wall segments, heights are ignored. Used to classify range
// boundaries — a boundary with no plan-view change is caused by height
// geometry (a roof silhouette) and is reported with a primed label.
// ---------------------------------------------------------------------------

namespace {

bool plan_segment_blocks(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b) {
    const Vec2 d = q - p;
    const Vec2 e = b - a;
    const double denom = cross(d, e);
    if (std::abs(denom) <= 1e-15 * (norm(d) * norm(e) + 1.0)) return false;  // parallel
    const double t = cross(a - p, e) / denom;
    const double u = cross(a - p, d) / denom;
    return t > 1e-9 && t < 1.0 - 1e-9 && u > 1e-9 && u < 1.0 - 1e-9;
}

bool plan_sightline_clear(const Vec2& p, const Vec2& q, const Scene& scene, int skip_index) {
    for (const Face* f : scene.faces()) {
        if (f->index == skip_index) continue;
        auto seg = plane_segment(*f, PlaneTag::XY);
        if (!seg) continue;
        if (plan_segment_blocks(p, q, seg->a, seg->b)) return false;
    }
    return true;
}

std::vector<std::array<double, 2>> plan_visible_intervals(const Vec2& src, const Face& face,
                                                          const PlaneSegment& seg,
                                                          const Scene& scene) {
    constexpr int kColumns = 65;
    const Vec2 d = seg.b - seg.a;
    auto vis_at = [&](double u) {
        return plan_sightline_clear(src, seg.a + d * std::clamp(u, 0.0, 1.0), scene, face.index);
    };

    std::vector<char> vis(kColumns);
    for (int i = 0; i < kColumns; ++i) vis[i] = vis_at(double(i) / (kColumns - 1)) ? 1 : 0;

    auto refine = [&](double lo, double hi, bool lo_vis) {
        for (int it = 0; it < 50 && hi - lo > 1e-15; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (vis_at(mid) == lo_vis)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };

    std::vector<std::array<double, 2>> out;
    const double step = 1.0 / (kColumns - 1);
    int i = 0;
    while (i < kColumns) {
        if (!vis[i]) {
            ++i;
            continue;
        }
        double start = double(i) / (kColumns - 1);
        if (i > 0) start = refine(start - step, start, false);
        int j = i;
        while (j + 1 < kColumns && vis[j + 1]) ++j;
        double end = double(j) / (kColumns - 1);
        if (j + 1 < kColumns) end = refine(end, end + step, true);
        out.push_back({start, end});
        i = j + 1;
    }
    return out;
}

bool plan_member_chain(const Vec2& src, const std::vector<std::string>& chain,
                       const Scene& scene) {
    const Face& head = scene.face(chain.front());
    auto seg = plane_segment(head, PlaneTag::XY);
    if (!seg) return false;
    if (dot(src - seg->a, seg->normal) <= kEps) return false;

    const auto intervals = plan_visible_intervals(src, head, *seg, scene);
    if (intervals.empty()) return false;
    auto best = std::max_element(
        intervals.begin(), intervals.end(),
        [](const auto& a, const auto& b) { return a[1] - a[0] < b[1] - b[0]; });

    const Vec2 d = seg->b - seg->a;
    Vec2 wa = seg->a + d * (*best)[0];
    Vec2 wb = seg->a + d * (*best)[1];
    Vec2 apex = mirror_across_segment(src, seg->a, seg->b);
    Vec2 outward = seg->normal;

    for (size_t i = 1; i < chain.size(); ++i) {
        const Face& g = scene.face(chain[i]);
        auto gseg = plane_segment(g, PlaneTag::XY);
        if (!gseg) return false;
        const HigherOrderResult cov = beam_coverage({apex, wa, wb, outward}, gseg->a, gseg->b);
        if (cov.verdict == ChainVerdict::None) return false;
        const Vec2 dq = gseg->b - gseg->a;
        wa = gseg->a + dq * cov.window[0];
        wb = gseg->a + dq * cov.window[1];
        apex = mirror_across_segment(apex, gseg->a, gseg->b);
        outward = gseg->normal;
    }
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Trajectory visibility table
// ---------------------------------------------------------------------------

namespace {

// One tracked node along the trajectory: a reflector chain (face node) or a
// face corner (vertex node, kept for diffraction bookkeeping).
struct SigKey {
    int order = 1;
    std::string parent;
    std::string node;
    bool vertex = false;

    bool operator<(const SigKey& o) const {
        return std::tie(order, parent, node, vertex) <
               std::tie(o.order, o.parent, o.node, o.vertex);
    }
    bool operator==(const SigKey& o) const {
        return order == o.order && parent == o.parent && node == o.node && vertex == o.vertex;
    }
};

// Membership machinery shared by the sampling pass and the bisection probes.
class MobileSampler {
  public:
    MobileSampler(const InterVisMatrix& matrix, const Scene& scene, int max_order)
        : matrix_(matrix), scene_(scene) {
        // Several chains may fold onto one (order, parent, node) signature.
        for (const InterVisEntry& e : matrix.entries()) {
            if (e.order > max_order) continue;
            const auto& chain = e.relation.chain;
            if (chain.size() < 2) continue;
            std::vector<std::string> reflectors(chain.begin(), chain.end() - 1);
            SigKey key;
            key.order = int(reflectors.size());
            key.node = reflectors.back();
            key.parent = reflectors.size() >= 2 ? reflectors[reflectors.size() - 2]
                                                : std::string("transmitter");
            auto& chains = chains_[key];
            if (std::find(chains.begin(), chains.end(), reflectors) == chains.end()) {
                chains.push_back(reflectors);
            }
        }
    }

    Vec3 vertex_corner(const SigKey& key) const {
        const auto pos = key.node.find('#');
        const Face& f = scene_.face(key.node.substr(0, pos));
        const size_t k = std::stoul(key.node.substr(pos + 1));
        return f.poly.pts.at(k);
    }

    bool member(const Vec3& source, const SigKey& key) const {
        if (key.vertex) {
            return sightline_clear(source, vertex_corner(key), scene_, -1);
        }
        auto it = chains_.find(key);
        if (it == chains_.end()) return false;
        TableBuilder builder(source, matrix_, scene_);
        for (const auto& chain : it->second) {
            if (builder.reach(chain)) return true;
        }
        return false;
    }

    std::set<SigKey> snapshot(const Vec3& source) const {
        std::set<SigKey> out;
        TableBuilder builder(source, matrix_, scene_);
        for (const auto& [key, chains] : chains_) {
            for (const auto& chain : chains) {
                if (builder.reach(chain)) {
                    out.insert(key);
                    break;
                }
            }
        }
        std::vector<SigKey> face_keys(out.begin(), out.end());
        for (const SigKey& key : face_keys) {
            if (key.order != 1) continue;
            const Face& f = scene_.face(key.node);
            for (size_t k = 0; k < f.poly.pts.size(); ++k) {
                if (sightline_clear(source, f.poly.pts[k], scene_, -1)) {
                    SigKey vk;
                    vk.order = 1;
                    vk.parent = "transmitter";
                    vk.node = key.node + "#" + std::to_string(k);
                    vk.vertex = true;
                    out.insert(vk);
                }
            }
        }
        return out;
    }

    // Classify one boundary and attribute its blocking building. `p_member`
    // and `p_other` are probe positions on the member / non-member sides.
    void classify(const SigKey& key, const Vec3& p_member, const Vec3& p_other, bool& vertical,
                  std::string& blockage) const {
        vertical = false;
        blockage = "-";
        const Vec2 m2 = project(p_member, PlaneTag::XY);
        const Vec2 o2 = project(p_other, PlaneTag::XY);

        std::set<std::string> member_blockers, other_blockers;
        if (key.vertex) {
            const Vec3 corner = vertex_corner(key);
            const Vec2 c2 = project(corner, PlaneTag::XY);
            const bool pm = plan_sightline_clear(m2, c2, scene_, -1);
            const bool po = plan_sightline_clear(o2, c2, scene_, -1);
            vertical = pm == po;  // no plan-view change: height geometry did it
            member_blockers = segment_blockers(p_member, corner, scene_);
            other_blockers = segment_blockers(p_other, corner, scene_);
        } else {
            auto it = chains_.find(key);
            if (it == chains_.end()) return;
            TableBuilder mb(p_member, matrix_, scene_);
            TableBuilder ob(p_other, matrix_, scene_);
            const std::vector<std::string>* flipped = nullptr;
            for (const auto& chain : it->second) {
                const bool rm = bool(mb.reach(chain));
                const bool ro = bool(ob.reach(chain));
                if (rm != ro) {
                    flipped = &chain;
                    break;
                }
            }
            if (!flipped) flipped = &it->second.front();
            const bool pm = plan_member_chain(m2, *flipped, scene_);
            const bool po = plan_member_chain(o2, *flipped, scene_);
            vertical = pm == po;
            const Face& head = scene_.face(flipped->front());
            member_blockers = probe_blockers(p_member, head, scene_);
            other_blockers = probe_blockers(p_other, head, scene_);
        }
        std::vector<std::string> fresh;
        std::set_difference(other_blockers.begin(), other_blockers.end(), member_blockers.begin(),
                            member_blockers.end(), std::back_inserter(fresh));
        if (!fresh.empty()) blockage = fresh.front();
    }

  private:
    const InterVisMatrix& matrix_;
    const Scene& scene_;
    std::map<SigKey, std::vector<std::vector<std::string>>> chains_;
};

struct BoundaryEvent {
    double s = 0.0;
    SigKey key;
    bool appearing = false;
    bool vertical = false;
    std::string blockage = "-";
    std::string label;
};

std::string node_display_name(const Scene& scene, const SigKey& key) {
    if (key.vertex) {
        const auto pos = key.node.find('#');
        const Face& f = scene.face(key.node.substr(0, pos));
        return f.label(PlaneTag::XY) + "#" + key.node.substr(pos + 1);
    }
    return scene.face(key.node).label(PlaneTag::XY);
}

std::string parent_display_name(const Scene& scene, const SigKey& key) {
    if (key.parent == "transmitter") return key.parent;
    return scene.face(key.parent).label(PlaneTag::XY);
}

}  // namespace

std::vector<MobileVisEntry> trajectory_vis_table(const Trajectory& traj,
                                                 const InterVisMatrix& matrix, const Scene& scene,
                                                 int max_order) {
    if (traj.waypoints.size() < 2 || traj.total_length() <= kEps) {
        throw VisibilityError("trajectory must contain at least two distinct waypoints");
    }
    if (matrix.max_order() < max_order) {
        throw VisibilityError("matrix holds orders up to " + std::to_string(matrix.max_order()) +
                              ", requested " + std::to_string(max_order));
    }

    const double length = traj.total_length();
    MobileSampler sampler(matrix, scene, max_order);

    // --- sample the membership snapshots ---------------------------------
    std::vector<double> samples;
    for (double s = 0.0; s < length; s += kTrajectoryStep) samples.push_back(s);
    samples.push_back(length);

    std::vector<std::set<SigKey>> snaps(samples.size());
    {
        std::atomic<size_t> next{0};
        const unsigned workers =
            std::max(1u, std::min<unsigned>(worker_thread_count(), unsigned(samples.size())));
        auto work = [&] {
            for (size_t i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1)) {
                snaps[i] = sampler.snapshot(traj.position_at(samples[i]));
            }
        };
        std::vector<std::thread> pool;
        for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
        work();
        for (auto& t : pool) t.join();
    }

    // --- locate and classify the membership boundaries -------------------
    std::vector<BoundaryEvent> events;
    for (size_t i = 0; i + 1 < samples.size(); ++i) {
        std::vector<SigKey> changed;
        std::set_symmetric_difference(snaps[i].begin(), snaps[i].end(), snaps[i + 1].begin(),
                                      snaps[i + 1].end(), std::back_inserter(changed));
        for (const SigKey& key : changed) {
            const bool before = snaps[i].count(key) > 0;
            double lo = samples[i], hi = samples[i + 1];
            while (hi - lo > kBoundaryTolerance) {
                const double mid = 0.5 * (lo + hi);
                if (sampler.member(traj.position_at(mid), key) == before)
                    lo = mid;
                else
                    hi = mid;
            }
            BoundaryEvent ev;
            ev.s = 0.5 * (lo + hi);
            ev.key = key;
            ev.appearing = !before;

            const double delta = 2.0 * kBoundaryTolerance;
            const double s_before = std::max(0.0, ev.s - delta);
            const double s_after = std::min(length, ev.s + delta);
            const Vec3 p_before = traj.position_at(s_before);
            const Vec3 p_after = traj.position_at(s_after);
            const Vec3& p_member = before ? p_before : p_after;
            const Vec3& p_other = before ? p_after : p_before;
            sampler.classify(key, p_member, p_other, ev.vertical, ev.blockage);
            events.push_back(std::move(ev));
        }
    }

    // --- label the boundaries: vertical-plane events first ----------------
    std::stable_sort(events.begin(), events.end(),
                     [](const BoundaryEvent& a, const BoundaryEvent& b) {
                         if (a.vertical != b.vertical) return a.vertical > b.vertical;
                         return a.s < b.s;
                     });
    int counter = 0;
    for (auto& ev : events) {
        ev.label = "P" + std::to_string(++counter) + (ev.vertical ? "'" : "");
    }
    std::sort(events.begin(), events.end(),
              [](const BoundaryEvent& a, const BoundaryEvent& b) { return a.s < b.s; });

    // --- assemble per-node ranges -----------------------------------------
    std::vector<MobileVisEntry> table;
    std::set<SigKey> all_keys;
    for (const auto& snap : snaps) all_keys.insert(snap.begin(), snap.end());
    for (const auto& ev : events) all_keys.insert(ev.key);

    for (const SigKey& key : all_keys) {
        bool open = snaps.front().count(key) > 0;
        double open_s = 0.0;
        std::string open_label = "-";
        std::string open_block = "-";
        auto close_range = [&](double s_end, const std::string& end_label,
                               const std::string& end_block) {
            MobileVisEntry row;
            row.order = key.order;
            row.node = key.node;
            row.node_display = node_display_name(scene, key);
            row.parent = parent_display_name(scene, key);
            row.s_start = open_s;
            row.s_end = s_end;
            row.label_start = open_label;
            row.label_end = end_label;
            row.blockage = open_block != "-" ? open_block : end_block;
            table.push_back(std::move(row));
        };
        for (const auto& ev : events) {
            if (!(ev.key == key)) continue;
            if (ev.appearing) {
                if (!open) {
                    open = true;
                    open_s = ev.s;
                    open_label = ev.label;
                    open_block = ev.blockage;
                }
            } else if (open) {
                close_range(ev.s, ev.label, ev.blockage);
                open = false;
            }
        }
        if (open) close_range(length, "-", "-");
    }

    // --- merge ranges that touch within the bisection tolerance -----------
    std::sort(table.begin(), table.end(), [](const MobileVisEntry& a, const MobileVisEntry& b) {
        return std::tie(a.order, a.parent, a.node, a.s_start) <
               std::tie(b.order, b.parent, b.node, b.s_start);
    });
    std::vector<MobileVisEntry> merged;
    for (auto& row : table) {
        if (!merged.empty()) {
            MobileVisEntry& last = merged.back();
            if (last.order == row.order && last.node == row.node && last.parent == row.parent &&
                last.blockage == row.blockage && row.s_start - last.s_end <= kBoundaryTolerance) {
                last.s_end = row.s_end;
                last.label_end = row.label_end;
                continue;
            }
        }
        merged.push_back(std::move(row));
    }
    return merged;
}

// ---------------------------------------------------------------------------
// Coherence times
// ---------------------------------------------------------------------------

namespace {

bool is_face_node(const MobileVisEntry& e) { return e.node.find('#') == std::string::npos; }

std::vector<CoherenceSegment> coherence_segments(const std::vector<MobileVisEntry>& table,
                                                 const Trajectory& traj) {
    const double length = traj.total_length();
    std::vector<double> cuts{0.0, length};
    for (const MobileVisEntry& e : table) {
        if (!is_face_node(e) || e.order >= 3) continue;
        for (double s : {e.s_start, e.s_end}) {
            if (s > kEps && s < length - kEps) cuts.push_back(s);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-9; }),
               cuts.end());

    std::vector<CoherenceSegment> segs;
    for (size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double s0 = cuts[i], s1 = cuts[i + 1];
        if (s1 - s0 <= 1e-9) continue;
        CoherenceSegment seg;
        seg.l = int(segs.size()) + 1;
        seg.d = s1 - s0;
        const double dt = traj.time_at(s1) - traj.time_at(s0);
        if (!(dt > 0.0) || !std::isfinite(dt)) {
            throw VisibilityError("trajectory has a zero-speed stretch");
        }
        seg.v = seg.d / dt;
        seg.tc = seg.d / seg.v;
        const Vec3 dir = traj.direction_at(0.5 * (s0 + s1));
        const Vec3 horiz{dir.x, dir.y, 0.0};
        if (norm(horiz) <= kEps) {
            seg.gamma_e = 90.0;
            seg.gamma_a = 0.0;
        } else {
            seg.gamma_e = angle_between_deg(dir, horiz);
            seg.gamma_a = angle_between_deg(horiz, traj.azimuth_reference);
        }
        segs.push_back(seg);
    }
    return segs;
}

}  // namespace

CoherenceResult coherence_times(
    const std::vector<MobileVisEntry>& table, const Trajectory& traj,
    const std::optional<std::pair<std::vector<MobileVisEntry>, Trajectory>>& second) {
    std::vector<CoherenceSegment> segs = coherence_segments(table, traj);
    if (second) {
        const std::vector<CoherenceSegment> other =
            coherence_segments(second->first, second->second);
        const size_t n = std::min(segs.size(), other.size());
        std::vector<CoherenceSegment> combined;
        for (size_t i = 0; i < n; ++i) {
            CoherenceSegment pick = other[i].tc < segs[i].tc ? other[i] : segs[i];
            pick.l = int(i) + 1;
            combined.push_back(pick);
        }
        segs = std::move(combined);
    }
    if (segs.empty()) throw VisibilityError("no coherence segments");

    CoherenceResult res;
    res.segments = segs;
    double total = 0.0;
    for (const auto& s : segs) total += s.tc;
    res.average = total / double(segs.size());
    return res;
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

std::string mobile_table_csv(const std::vector<MobileVisEntry>& table) {
    std::ostringstream os;
    os << "order,visible_node,s_start,s_end,parent,blockage\n";
    os << std::fixed << std::setprecision(6);
    for (const MobileVisEntry& e : table) {
        os << e.order << ',' << e.node_display << ',' << e.s_start << ',' << e.s_end << ','
           << e.parent << ',' << e.blockage << '\n';
    }
    return os.str();
}

std::string coherence_csv(const CoherenceResult& result) {
    std::ostringstream os;
    os << "l,d_l,v_l,T_c_l\n";
    os << std::setprecision(12);
    for (const CoherenceSegment& s : result.segments) {
        os << s.l << ',' << s.d << ',' << s.v << ',' << s.tc << '\n';
    }
    os << "average,,," << result.average << '\n';
    return os.str();
}

}  // namespace rt
