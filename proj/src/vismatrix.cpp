// SPDX-License-Identifier: Apache-2.0

#include "rt/vismatrix.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

namespace rt {
namespace {

constexpr double kFullCoverTol = 1e-9;

std::string plane_to_string(PlaneTag tag) {
    switch (tag) {
        case PlaneTag::XY: return "xy";
        case PlaneTag::YZ: return "yz";
        default: return "xz";
    }
}

PlaneTag plane_from_string(const std::string& s) {
    if (s == "xy") return PlaneTag::XY;
    if (s == "yz") return PlaneTag::YZ;
    if (s == "xz") return PlaneTag::XZ;
    throw VisibilityError("unknown working plane '" + s + "'");
}

// ---------------------------------------------------------------------------
// Exact interval arithmetic over a segment parameter. Sets are kept sorted
// and disjoint.
// ---------------------------------------------------------------------------

using Interval = std::array<double, 2>;
using IntervalSet = std::vector<Interval>;

IntervalSet normalize_set(IntervalSet s) {
    std::sort(s.begin(), s.end());
    IntervalSet out;
    for (const Interval& iv : s) {
        if (iv[1] - iv[0] < 0) continue;
        if (!out.empty() && iv[0] <= out.back()[1] + 1e-15) {
            out.back()[1] = std::max(out.back()[1], iv[1]);
        } else {
            out.push_back(iv);
        }
    }
    return out;
}

IntervalSet set_union(IntervalSet a, const IntervalSet& b) {
    a.insert(a.end(), b.begin(), b.end());
    return normalize_set(std::move(a));
}

IntervalSet set_intersect(const IntervalSet& a, const IntervalSet& b) {
    IntervalSet out;
    for (const Interval& x : a) {
        for (const Interval& y : b) {
            const double lo = std::max(x[0], y[0]);
            const double hi = std::min(x[1], y[1]);
            if (lo <= hi) out.push_back({lo, hi});
        }
    }
    return normalize_set(std::move(out));
}

/// Solution set of a*t + b <= 0 (or >= 0 when `leq` is false) over [lo, hi].
IntervalSet affine_halfline(double a, double b, bool leq, double lo, double hi) {
    if (!leq) {
        a = -a;
        b = -b;
    }
    if (std::abs(a) < 1e-300) {
        if (b <= 0) return {{lo, hi}};
        return {};
    }
    const double t = -b / a;
    if (a > 0) {
        if (t < lo) return {};
        return {{lo, std::min(t, hi)}};
    }
    if (t > hi) return {};
    return {{std::max(t, lo), hi}};
}

double set_length(const IntervalSet& s) {
    double len = 0;
    for (const Interval& iv : s) len += iv[1] - iv[0];
    return len;
}

// ---------------------------------------------------------------------------
// Working-plane helpers
// ---------------------------------------------------------------------------

struct Frame2 {
    Vec2 origin;
    Vec2 ux, uy;
    Vec2 map(const Vec2& p) const {
        const Vec2 r{p.x - origin.x, p.y - origin.y};
        return {dot(r, ux), dot(r, uy)};
    }
};

/// Frame with the given segment on the positive x-axis and its outward
/// normal along +y.
Frame2 segment_frame(const PlaneSegment& seg) {
    Frame2 f;
    f.origin = seg.a;
    const Vec2 d{seg.b.x - seg.a.x, seg.b.y - seg.a.y};
    const double len = norm(d);
    f.ux = d * (1.0 / len);
    f.uy = seg.normal;
    if (cross(f.ux, f.uy) < 0) {
        // keep a right-handed map so orientation is consistent; flip the
        // segment direction instead of the outward side
        f.origin = seg.b;
        f.ux = f.ux * -1.0;
    }
    return f;
}

/// Clips the parameter range of segment p0->p1 to the halfplane y >= 0 of a
/// frame-mapped pair. Returns false when the segment lies entirely below.
bool clip_param_to_upper(const Vec2& p0, const Vec2& p1, double& lo, double& hi) {
    lo = 0.0;
    hi = 1.0;
    const double y0 = p0.y, y1 = p1.y;
    const double dy = y1 - y0;
    if (std::abs(dy) < 1e-300) {
        return y0 >= -kEps;
    }
    const double tcross = -y0 / dy;
    if (dy > 0) {
        lo = std::max(0.0, tcross);
    } else {
        hi = std::min(1.0, tcross);
    }
    return hi - lo > 1e-12;
}

}  // namespace

int worker_thread_count() {
    if (const char* env = std::getenv("VISRT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

bool mutually_front(const Face& a, const Face& b) {
    auto has_front_point = [](const Face& of, const Face& probe) {
        const Plane plane = of.poly.plane();
        for (const Vec3& p : probe.poly.pts) {
            if (plane.signed_distance(p) > kEps) return true;
        }
        return false;
    };
    return has_front_point(a, b) && has_front_point(b, a);
}

std::vector<PlaneTag> required_planes(const Face& ref, const Face& aim) {
    std::vector<PlaneTag> out;
    for (PlaneTag tag : {PlaneTag::XY, PlaneTag::YZ, PlaneTag::XZ}) {
        const auto sr = plane_segment(ref, tag);
        const auto sa = plane_segment(aim, tag);
        if (!sr || !sa) continue;
        const double d = std::abs(dot(sr->normal, sa->normal));
        if (d >= 1.0 - 1e-9 || d <= 1e-9) out.push_back(tag);
    }
    return out;
}

InterfaceRelation classify_relation_in_plane(const Face& ref, const Face& aim, PlaneTag plane) {
    const auto sr = plane_segment(ref, plane);
    const auto sa = plane_segment(aim, plane);
    if (!sr || !sa) {
        throw VisibilityError("faces '" + ref.id + "' and '" + aim.id +
                              "' do not both project to segments in plane " +
                              plane_to_string(plane));
    }
    const double d = std::abs(dot(sr->normal, sa->normal));
    InterfaceRelation rel;
    rel.plane = plane;
    rel.chain = {ref.id, aim.id};
    rel.chain_orientations = {ref.orientation, aim.orientation};
    if (d >= 1.0 - 1e-9) {
        rel.kind = RelationKind::Parallel;
    } else if (d <= 1e-9) {
        rel.kind = RelationKind::Perpendicular;
    } else {
        throw VisibilityError("faces '" + ref.id + "' and '" + aim.id +
                              "' are neither parallel nor perpendicular in plane " +
                              plane_to_string(plane));
    }
    return rel;
}

InterfaceRelation classify_relation(const Face& ref, const Face& aim) {
    if (ref.id == aim.id) {
        throw VisibilityError("reference and aim face must differ (got '" + ref.id + "')");
    }
    if (ref.orientation == Orientation::Oblique || aim.orientation == Orientation::Oblique) {
        throw VisibilityError("unsupported relation: face pair ('" + ref.id + "', '" + aim.id +
                              "') involves an oblique face");
    }
    const auto planes = required_planes(ref, aim);
    if (planes.empty()) {
        throw VisibilityError("unsupported relation: faces '" + ref.id + "' and '" + aim.id +
                              "' share no working plane");
    }
    return classify_relation_in_plane(ref, aim, planes.front());
}

namespace {

std::vector<Vec3> face_samples(const Face& face) {
    const auto& pts = face.poly.pts;
    std::vector<Vec3> out(pts.begin(), pts.end());
    out.push_back(face.poly.centroid());
    if (pts.size() == 4) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                const double u = (i + 0.5) / 4.0;
                const double v = (j + 0.5) / 4.0;
                const Vec3 p = pts[0] * ((1 - u) * (1 - v)) + pts[1] * (u * (1 - v)) +
                               pts[2] * (u * v) + pts[3] * ((1 - u) * v);
                out.push_back(p);
            }
        }
    } else {
        const Vec3 c = face.poly.centroid();
        for (const Vec3& p : pts) {
            for (double s : {0.25, 0.5, 0.75}) {
                out.push_back(c + (p - c) * s);
            }
        }
    }
    return out;
}

}  // namespace

OcclusionVerdict occlusion_judgment(const Face& ref, const Face& aim, const Scene& scene) {
    if (ref.id == aim.id) {
        throw VisibilityError("occlusion judgment needs two distinct faces (got '" + ref.id +
                              "')");
    }
    const auto sr = face_samples(ref);
    const auto sa = face_samples(aim);
    const size_t nr = ref.poly.pts.size();
    const size_t na = aim.poly.pts.size();

    std::vector<std::pair<Vec3, Vec3>> sightlines;
    for (size_t i = 0; i < nr; ++i) {
        for (size_t j = 0; j < na; ++j) {
            sightlines.emplace_back(sr[i], sa[j]);
        }
    }
    sightlines.emplace_back(sr[nr], sa[na]);  // centroids
    const size_t grid = std::min(sr.size() - nr - 1, sa.size() - na - 1);
    for (size_t k = 0; k < grid; ++k) {
        sightlines.emplace_back(sr[nr + 1 + k], sa[na + 1 + k]);
    }

    size_t blocked = 0;
    std::set<std::string> blockers;
    for (const auto& [p, q] : sightlines) {
        if (norm(q - p) <= kEps) {
            continue;
        }
        bool hit = false;
        for (const Face* other : scene.faces()) {
            if (other->id == ref.id || other->id == aim.id) continue;
            if (segment_face_intersection(p, q, other->poly)) {
                blockers.insert(other->id);
                hit = true;
            }
        }
        if (hit) ++blocked;
    }

    OcclusionVerdict verdict;
    if (blocked == 0) {
        verdict.kind = OcclusionVerdict::Kind::Visible;
    } else if (blocked == sightlines.size()) {
        verdict.kind = OcclusionVerdict::Kind::Occluded;
    } else {
        verdict.kind = OcclusionVerdict::Kind::PartiallyVisible;
    }
    verdict.blockers.assign(blockers.begin(), blockers.end());
    return verdict;
}

namespace {

std::vector<Vec3> chain_image(const Scene& scene, const std::vector<std::string>& chain) {
    const Face& aim = scene.face(chain.back());
    std::vector<Vec3> img(aim.poly.pts.begin(), aim.poly.pts.end());
    for (size_t k = chain.size() - 1; k-- > 0;) {
        const Plane plane = scene.face(chain[k]).poly.plane();
        for (Vec3& p : img) p = mirror_point(p, plane);
    }
    return img;
}

std::string bounding_edge_id(const Scene& scene, const Face& face, PlaneTag plane,
                             const Vec2& endpoint) {
    if (face.building.empty()) return "";
    for (const Edge& e : scene.edges()) {
        if (e.building != face.building) continue;
        if (std::find(e.faces.begin(), e.faces.end(), face.id) == e.faces.end()) continue;
        const Vec2 pa = project(e.a, plane);
        const Vec2 pb = project(e.b, plane);
        if (norm(Vec2{pa.x - endpoint.x, pa.y - endpoint.y}) <= 1e-9 &&
            norm(Vec2{pb.x - endpoint.x, pb.y - endpoint.y}) <= 1e-9) {
            return e.id;
        }
    }
    return "";
}

AngleRecord angle_record(const Scene& scene, const Face& ref, PlaneTag plane, const Vec2& at,
                         const Vec2& other, const Vec2& outward, const PlaneSegment& aim_seg) {
    AngleRecord rec;
    rec.vertex = at;
    rec.outward = outward;
    const Vec2 d{other.x - at.x, other.y - at.y};
    rec.ref_dir = d * (1.0 / norm(d));
    rec.edge_id = bounding_edge_id(scene, ref, plane, at);

    auto angle_to = [&](const Vec2& target) {
        const Vec2 v{target.x - at.x, target.y - at.y};
        if (norm(v) <= kEps) return 0.0;  // aim touches this edge: grazing
        return clamp_visibility_angle(oriented_angle_deg(rec.ref_dir, outward, v));
    };
    const double a1 = angle_to(aim_seg.a);
    const double a2 = angle_to(aim_seg.b);
    rec.low = std::min(a1, a2);
    rec.high = std::max(a1, a2);
    return rec;
}

bool range_is_degenerate(const AngularBouncingRange& r) {
    return std::abs(r.at_a.high - r.at_a.low) <= 1e-12 &&
           std::abs(r.at_b.high - r.at_b.low) <= 1e-12;
}

AngularBouncingRange clamp_complement(const AngularBouncingRange& r) {
    auto flip = [](const AngleRecord& rec) {
        AngleRecord out = rec;
        const double a = clamp_visibility_angle(180.0 - rec.low);
        const double b = clamp_visibility_angle(180.0 - rec.high);
        out.low = std::min(a, b);
        out.high = std::max(a, b);
        return out;
    };
    return {flip(r.at_a), flip(r.at_b)};
}

}  // namespace

AngularBouncingRange first_order_ranges(const Face& ref, const Face& aim,
                                        const InterfaceRelation& rel, const Scene& scene) {
    const auto sr = plane_segment(ref, rel.plane);
    const auto sa = plane_segment(aim, rel.plane);
    if (!sr || !sa) {
        throw VisibilityError("faces '" + ref.id + "' and '" + aim.id +
                              "' do not both project to segments in plane " +
                              plane_to_string(rel.plane));
    }
    AngularBouncingRange out;
    out.at_a = angle_record(scene, ref, rel.plane, sr->a, sr->b, sr->normal, *sa);
    out.at_b = angle_record(scene, ref, rel.plane, sr->b, sr->a, sr->normal, *sa);
    return out;
}

SecondOrderResult second_order_check(const Face& original, const Face& mid, const Face& test,
                                     const InterVisMatrix& matrix, PlaneTag plane) {
    if (!matrix.find(1, original.id, mid.id, plane) || !matrix.find(1, mid.id, test.id, plane)) {
        throw VisibilityError("second-order check needs first-order entries for ('" +
                              original.id + "','" + mid.id + "') and ('" + mid.id + "','" +
                              test.id + "') in plane " + plane_to_string(plane));
    }
    const auto so = plane_segment(original, plane);
    const auto sm = plane_segment(mid, plane);
    const auto st = plane_segment(test, plane);
    if (!so || !sm || !st) {
        throw VisibilityError("second-order check: missing segment projection in plane " +
                              plane_to_string(plane));
    }

    const Frame2 frame = segment_frame(*sm);
    const double length = norm(Vec2{sm->b.x - sm->a.x, sm->b.y - sm->a.y});

    // Launch region: the part of the original face on the reflective side.
    Vec2 p0 = frame.map(so->a);
    Vec2 p1 = frame.map(so->b);
    {
        double lo, hi;
        if (!clip_param_to_upper(p0, p1, lo, hi)) return {ChainVerdict::None, {}};
        const Vec2 q0{p0.x + lo * (p1.x - p0.x), p0.y + lo * (p1.y - p0.y)};
        const Vec2 q1{p0.x + hi * (p1.x - p0.x), p0.y + hi * (p1.y - p0.y)};
        p0 = q0;
        p1 = q1;
    }

    // Test face, mirrored across the mid line (y -> -y), domain clipped to
    // the part of the test face on the reflective side.
    const Vec2 c0 = frame.map(st->a);
    const Vec2 c1 = frame.map(st->b);
    double dlo, dhi;
    if (!clip_param_to_upper(c0, c1, dlo, dhi)) return {ChainVerdict::None, {}};
    const Vec2 m0{c0.x, -c0.y};
    const Vec2 md{c1.x - c0.x, -(c1.y - c0.y)};

    // A point q(t) of the mirrored test segment is reachable iff the central
    // projection of the launch region from q(t) onto the mid line overlaps
    // [0, length]. With den(p,t) = p.y - q(t).y >= 0, the projected abscissa
    // num/den compares against a bound via an affine inequality in t.
    auto condition = [&](const Vec2& p, double bound, bool leq) {
        const double a_num = md.x * p.y - p.x * md.y;
        const double b_num = m0.x * p.y - p.x * m0.y;
        const double a_den = -md.y;
        const double b_den = p.y - m0.y;
        return affine_halfline(a_num - bound * a_den, b_num - bound * b_den, leq, dlo, dhi);
    };
    const IntervalSet reach_right = set_union(condition(p0, length, true), condition(p1, length, true));
    const IntervalSet reach_left = set_union(condition(p0, 0.0, false), condition(p1, 0.0, false));
    const IntervalSet reachable = set_intersect(reach_right, reach_left);

    SecondOrderResult result;
    if (set_length(reachable) <= 1e-12) {
        result.verdict = ChainVerdict::None;
        return result;
    }
    result.reachable.assign(reachable.begin(), reachable.end());
    if (reachable.size() == 1 && reachable.front()[0] <= kFullCoverTol &&
        reachable.front()[1] >= 1.0 - kFullCoverTol) {
        result.verdict = ChainVerdict::Full;
        result.reachable.clear();
    } else {
        result.verdict = ChainVerdict::Partial;
    }
    return result;
}

bool chain_triple_feasible(const Face& original, const Face& mid, const Face& test) {
    const Plane plane = mid.poly.plane();

    const std::vector<Vec3> launch = clip_polygon_halfspace(original.poly.pts, plane);
    const std::vector<Vec3> target = clip_polygon_halfspace(test.poly.pts, plane);
    if (launch.size() < 2 || target.size() < 2) return false;

    std::vector<Vec3> pts = launch;
    for (const Vec3& p : target) pts.push_back(mirror_point(p, plane));

    const PlaneFrame frame = PlaneFrame::from_plane(plane);
    const std::vector<Vec2> slice = hull_plane_slice(pts, plane, frame);
    if (slice.empty()) return false;

    std::vector<Vec2> mid2d;
    mid2d.reserve(mid.poly.pts.size());
    for (const Vec3& p : mid.poly.pts) mid2d.push_back(frame.to2d(p));

    return convex_polygons_overlap_2d(slice, mid2d);
}

std::vector<InterVisEntry> vertical_horizontal_chain(const Face& a, const Face& b, const Face& c,
                                                     const InterVisMatrix& matrix,
                                                     const Scene& scene) {
    for (const Face* f : {&a, &b, &c}) {
        if (f->orientation == Orientation::Oblique) {
            throw VisibilityError("unsupported chain: face '" + f->id + "' is oblique");
        }
    }
    const bool vhv = a.orientation == Orientation::Vertical &&
                     b.orientation == Orientation::Horizontal &&
                     c.orientation == Orientation::Vertical;
    const bool hvv = a.orientation == Orientation::Horizontal &&
                     b.orientation == Orientation::Vertical &&
                     c.orientation == Orientation::Vertical;
    if (!vhv && !hvv) {
        throw VisibilityError("chain ('" + a.id + "','" + b.id + "','" + c.id +
                              "') is not a mixed vertical/horizontal order-2 chain");
    }
    std::vector<InterVisEntry> out;
    if (!matrix.pair_admitted(a.id, b.id) || !matrix.pair_admitted(b.id, c.id)) {
        return out;
    }
    if (hvv) {
        // The vertical-vertical leg must behave as a facing parallel pair on
        // distinct planes.
        const auto sb = plane_segment(b, PlaneTag::XY);
        const auto sc = plane_segment(c, PlaneTag::XY);
        if (!sb || !sc) return out;
        if (std::abs(dot(sb->normal, sc->normal)) < 1.0 - 1e-9) return out;
        if (std::abs(b.poly.plane().signed_distance(c.poly.centroid())) <= kEps) return out;
        if (!mutually_front(b, c)) return out;
    }
    if (!chain_triple_feasible(a, b, c)) return out;

    const auto planes = required_planes(b, c);
    if (planes.empty()) return out;
    InterVisEntry entry;
    entry.order = 2;
    entry.ref = a.id;
    entry.aim = c.id;
    entry.relation = classify_relation_in_plane(b, c, planes.front());
    entry.relation.chain = {a.id, b.id, c.id};
    entry.relation.chain_orientations = {a.orientation, b.orientation, c.orientation};
    entry.ranges = first_order_ranges(b, c, entry.relation, scene);
    const auto first_leg_planes = required_planes(a, b);
    if (!first_leg_planes.empty()) {
        entry.criterion = clamp_complement(
            first_order_ranges(a, b, classify_relation_in_plane(a, b, first_leg_planes.front()),
                               scene));
    }
    // The two legs never overlap on a shared plane, so the chain simply links
    // the two first-order processes.
    entry.verdict = ChainVerdict::Full;
    entry.aim_image = chain_image(scene, entry.relation.chain);
    out.push_back(std::move(entry));
    return out;
}

// ---------------------------------------------------------------------------
// InterVisMatrix container
// ---------------------------------------------------------------------------

std::vector<const InterVisEntry*> InterVisMatrix::find(int order, const std::string& ref,
                                                       const std::string& aim) const {
    std::vector<const InterVisEntry*> out;
    auto it = index_.find({order, ref, aim});
    if (it == index_.end()) return out;
    for (size_t i : it->second) out.push_back(&entries_[i]);
    return out;
}

const InterVisEntry* InterVisMatrix::find(int order, const std::string& ref,
                                          const std::string& aim, PlaneTag plane) const {
    auto it = index_.find({order, ref, aim});
    if (it == index_.end()) return nullptr;
    for (size_t i : it->second) {
        if (entries_[i].relation.plane == plane) return &entries_[i];
    }
    return nullptr;
}

bool InterVisMatrix::pair_admitted(const std::string& ref, const std::string& aim) const {
    return index_.count({1, ref, aim}) > 0;
}

std::vector<std::string> InterVisMatrix::aims_of(const std::string& ref) const {
    std::vector<std::string> out;
    for (const InterVisEntry& e : entries_) {
        if (e.order != 1 || e.ref != ref) continue;
        if (std::find(out.begin(), out.end(), e.aim) == out.end()) out.push_back(e.aim);
    }
    return out;
}

void InterVisMatrix::add(InterVisEntry entry) {
    // Chains are distinguished by their full face sequence; plain duplicates
    // of an (order, ref, aim, plane, chain) key are rejected.
    auto& slot = index_[{entry.order, entry.ref, entry.aim}];
    for (size_t i : slot) {
        const InterVisEntry& e = entries_[i];
        if (e.relation.plane == entry.relation.plane && e.relation.chain == entry.relation.chain) {
            throw VisibilityError("duplicate matrix entry for ('" + entry.ref + "','" +
                                  entry.aim + "')");
        }
    }
    slot.push_back(entries_.size());
    entries_.push_back(std::move(entry));
}

// ---------------------------------------------------------------------------
// Matrix build
// ---------------------------------------------------------------------------

namespace {

struct PairResult {
    std::vector<InterVisEntry> entries;
};

PairResult first_order_pair(const Scene& scene, const Face& fa, const Face& fb) {
    PairResult result;
    if (fa.orientation == Orientation::Oblique || fb.orientation == Orientation::Oblique) {
        return result;
    }
    if (!mutually_front(fa, fb)) return result;
    const auto planes = required_planes(fa, fb);
    if (planes.empty()) return result;

    const OcclusionVerdict occ = occlusion_judgment(fa, fb, scene);
    if (occ.kind == OcclusionVerdict::Kind::Occluded) return result;

    struct Directed {
        const Face* ref;
        const Face* aim;
    };
    std::vector<InterVisEntry> pending;
    for (PlaneTag plane : planes) {
        for (const Directed& d : {Directed{&fa, &fb}, Directed{&fb, &fa}}) {
            InterVisEntry entry;
            entry.order = 1;
            entry.ref = d.ref->id;
            entry.aim = d.aim->id;
            entry.relation = classify_relation_in_plane(*d.ref, *d.aim, plane);
            entry.ranges = first_order_ranges(*d.ref, *d.aim, entry.relation, scene);
            if (range_is_degenerate(entry.ranges)) {
                return result;  // zero-width in one plane: the pair is excluded
            }
            if (occ.kind == OcclusionVerdict::Kind::PartiallyVisible) {
                entry.blockers = occ.blockers;
            }
            entry.aim_image = chain_image(scene, entry.relation.chain);
            pending.push_back(std::move(entry));
        }
    }
    result.entries = std::move(pending);
    return result;
}

}  // namespace

InterVisMatrix build_matrix(const Scene& scene, int max_order) {
    if (max_order < 1 || max_order > 4) {
        throw VisibilityError("max reflection order must be between 1 and 4");
    }
    InterVisMatrix matrix;
    matrix.set_max_order(max_order);

    const auto& faces = scene.faces();
    const size_t n = faces.size();
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            pairs.emplace_back(i, j);
        }
    }

    std::vector<PairResult> results(pairs.size());
    const int threads = std::min<int>(worker_thread_count(), static_cast<int>(pairs.size()) + 1);
    if (threads > 1) {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&]() {
                for (size_t k = next.fetch_add(1); k < pairs.size(); k = next.fetch_add(1)) {
                    results[k] =
                        first_order_pair(scene, *faces[pairs[k].first], *faces[pairs[k].second]);
                }
            });
        }
        for (auto& th : pool) th.join();
    } else {
        for (size_t k = 0; k < pairs.size(); ++k) {
            results[k] = first_order_pair(scene, *faces[pairs[k].first], *faces[pairs[k].second]);
        }
    }
    for (PairResult& r : results) {
        for (InterVisEntry& e : r.entries) matrix.add(std::move(e));
    }

    // Chains: grow admissible face sequences order by order, pruning with the
    // exact double-reflection feasibility of every new triple. Everything a
    // grown entry records depends only on its last two or three faces, so the
    // per-pair and per-triple work is computed once and reused across the
    // exponentially many chains that share the same tail.
    struct PairExt {
        InterfaceRelation relation;  // classified in the first shared plane
        AngularBouncingRange ranges;
        std::optional<AngularBouncingRange> criterion;  // complement of own ranges
        std::vector<PlaneTag> planes;
    };
    struct TripleExt {
        bool feasible = false;
        PlaneTag plane = PlaneTag::XY;
        ChainVerdict verdict = ChainVerdict::Partial;
        std::vector<std::array<double, 2>> subranges;
    };
    std::vector<std::vector<int>> aims_idx(n);
    for (size_t i = 0; i < n; ++i) {
        for (const std::string& aim : matrix.aims_of(faces[i]->id)) {
            aims_idx[i].push_back(scene.face(aim).index);
        }
    }
    std::unordered_map<size_t, PairExt> pair_cache;
    std::unordered_map<size_t, TripleExt> triple_cache;
    auto pair_ext = [&](int b_idx, int c_idx) -> const PairExt& {
        const size_t key = static_cast<size_t>(b_idx) * n + static_cast<size_t>(c_idx);
        auto it = pair_cache.find(key);
        if (it != pair_cache.end()) return it->second;
        const Face& b = scene.face(b_idx);
        const Face& c = scene.face(c_idx);
        PairExt pe;
        pe.planes = required_planes(b, c);
        pe.relation = classify_relation_in_plane(b, c, pe.planes.front());
        pe.ranges = first_order_ranges(b, c, pe.relation, scene);
        pe.criterion = clamp_complement(pe.ranges);
        return pair_cache.emplace(key, std::move(pe)).first->second;
    };
    auto triple_ext = [&](int a_idx, int b_idx, int c_idx) -> const TripleExt& {
        const size_t key =
            (static_cast<size_t>(a_idx) * n + static_cast<size_t>(b_idx)) * n +
            static_cast<size_t>(c_idx);
        auto it = triple_cache.find(key);
        if (it != triple_cache.end()) return it->second;
        const Face& a = scene.face(a_idx);
        const Face& b = scene.face(b_idx);
        const Face& c = scene.face(c_idx);
        TripleExt te;
        if (chain_triple_feasible(a, b, c)) {
            // Per-plane verdicts for the triple, in every working plane the
            // last pair shares. Any plane proving the triple unreachable
            // drops it; extents are recorded from the first shared plane.
            const PairExt& pe = pair_ext(b_idx, c_idx);
            te.feasible = true;
            te.plane = pe.relation.plane;
            bool recorded = false;
            for (PlaneTag plane : pe.planes) {
                if (!matrix.find(1, a.id, b.id, plane)) continue;
                const SecondOrderResult r = second_order_check(a, b, c, matrix, plane);
                if (r.verdict == ChainVerdict::None) {
                    te.feasible = false;
                    break;
                }
                if (!recorded) {
                    te.plane = plane;
                    te.verdict = r.verdict;
                    te.subranges = r.reachable;
                    recorded = true;
                } else if (r.verdict != ChainVerdict::Full) {
                    te.verdict = ChainVerdict::Partial;
                }
            }
        }
        return triple_cache.emplace(key, std::move(te)).first->second;
    };

    std::vector<std::vector<int>> frontier;
    for (size_t i = 0; i < n; ++i) {
        for (int aim : aims_idx[i]) {
            frontier.push_back({static_cast<int>(i), aim});
        }
    }
    std::vector<std::string> grown;
    for (int order = 2; order <= max_order; ++order) {
        std::vector<std::vector<int>> next_frontier;
        for (const auto& chain : frontier) {
            const int tail = chain.back();
            const int prev = chain[chain.size() - 2];
            for (int aim : aims_idx[static_cast<size_t>(tail)]) {
                const TripleExt& te = triple_ext(prev, tail, aim);
                if (!te.feasible) continue;

                grown.clear();
                for (int idx : chain) grown.push_back(scene.face(idx).id);
                grown.push_back(scene.face(aim).id);

                const PairExt& pe = pair_ext(tail, aim);
                InterVisEntry entry;
                entry.order = order;
                entry.ref = grown.front();
                entry.aim = grown.back();
                entry.relation = pe.relation;
                entry.relation.plane = te.plane;
                entry.relation.chain = grown;
                entry.relation.chain_orientations.clear();
                for (const std::string& id : grown) {
                    entry.relation.chain_orientations.push_back(scene.face(id).orientation);
                }
                entry.ranges = pe.ranges;
                entry.criterion = pair_ext(prev, tail).criterion;
                entry.verdict = te.verdict;
                entry.subranges = te.subranges;
                entry.aim_image = chain_image(scene, grown);
                std::vector<int> grown_idx = chain;
                grown_idx.push_back(aim);
                next_frontier.push_back(std::move(grown_idx));
                matrix.add(std::move(entry));
            }
        }
        frontier = std::move(next_frontier);
    }
    return matrix;
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

namespace {

void write_double(std::ostream& os, double v) { os << ' ' << std::setprecision(17) << v; }

std::string orientation_code(Orientation o) {
    switch (o) {
        case Orientation::Horizontal: return "H";
        case Orientation::Vertical: return "V";
        default: return "O";
    }
}

Orientation orientation_from_code(const std::string& s) {
    if (s == "H") return Orientation::Horizontal;
    if (s == "V") return Orientation::Vertical;
    if (s == "O") return Orientation::Oblique;
    throw VisibilityError("unknown orientation code '" + s + "'");
}

void write_record(std::ostream& os, const char* tag, const AngleRecord& rec) {
    os << tag << ' ' << (rec.edge_id.empty() ? "-" : rec.edge_id);
    write_double(os, rec.vertex.x);
    write_double(os, rec.vertex.y);
    write_double(os, rec.ref_dir.x);
    write_double(os, rec.ref_dir.y);
    write_double(os, rec.outward.x);
    write_double(os, rec.outward.y);
    write_double(os, rec.low);
    write_double(os, rec.high);
    os << '\n';
}

AngleRecord read_record(std::istringstream& ss) {
    AngleRecord rec;
    ss >> rec.edge_id;
    if (rec.edge_id == "-") rec.edge_id.clear();
    ss >> rec.vertex.x >> rec.vertex.y >> rec.ref_dir.x >> rec.ref_dir.y >> rec.outward.x >>
        rec.outward.y >> rec.low >> rec.high;
    if (!ss) throw VisibilityError("malformed angle record in matrix file");
    return rec;
}

}  // namespace

void save_matrix(const InterVisMatrix& matrix, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw VisibilityError("cannot write matrix file '" + path + "'");
    }
    out << "visrt-matrix v1\n";
    out << "max_order " << matrix.max_order() << "\n";
    for (const InterVisEntry& e : matrix.entries()) {
        for (const std::string& id : e.relation.chain) {
            if (id.find(' ') != std::string::npos) {
                throw VisibilityError("face id '" + id + "' contains a space; not exportable");
            }
        }
        out << "entry " << e.order << ' ' << e.ref << ' ' << e.aim << ' '
            << plane_to_string(e.relation.plane) << ' '
            << (e.relation.kind == RelationKind::Parallel ? "PAR" : "PER") << ' '
            << (e.verdict == ChainVerdict::Full ? "full" : "partial") << '\n';
        out << "chain";
        for (const std::string& id : e.relation.chain) out << ' ' << id;
        out << '\n';
        out << "orient";
        for (Orientation o : e.relation.chain_orientations) out << ' ' << orientation_code(o);
        out << '\n';
        write_record(out, "ata", e.ranges.at_a);
        write_record(out, "atb", e.ranges.at_b);
        if (e.criterion) {
            write_record(out, "cta", e.criterion->at_a);
            write_record(out, "ctb", e.criterion->at_b);
        }
        for (const auto& sub : e.subranges) {
            out << "sub";
            write_double(out, sub[0]);
            write_double(out, sub[1]);
            out << '\n';
        }
        for (const std::string& b : e.blockers) out << "blocker " << b << '\n';
        for (const Vec3& p : e.aim_image) {
            out << "img";
            write_double(out, p.x);
            write_double(out, p.y);
            write_double(out, p.z);
            out << '\n';
        }
        out << "end\n";
    }
}

InterVisMatrix load_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw VisibilityError("cannot open matrix file '" + path + "'");
    }
    std::string line;
    if (!std::getline(in, line) || line != "visrt-matrix v1") {
        throw VisibilityError("matrix file '" + path + "' has an unknown header");
    }
    InterVisMatrix matrix;
    InterVisEntry entry;
    bool in_entry = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "max_order") {
            int mo = 1;
            ss >> mo;
            matrix.set_max_order(mo);
        } else if (tag == "entry") {
            entry = InterVisEntry{};
            std::string plane, kind, verdict;
            ss >> entry.order >> entry.ref >> entry.aim >> plane >> kind >> verdict;
            if (!ss) throw VisibilityError("malformed entry line in matrix file");
            entry.relation.plane = plane_from_string(plane);
            entry.relation.kind = kind == "PAR" ? RelationKind::Parallel
                                                : RelationKind::Perpendicular;
            entry.verdict = verdict == "full" ? ChainVerdict::Full : ChainVerdict::Partial;
            in_entry = true;
        } else if (!in_entry) {
            throw VisibilityError("unexpected line outside entry: " + line);
        } else if (tag == "chain") {
            std::string id;
            while (ss >> id) entry.relation.chain.push_back(id);
        } else if (tag == "orient") {
            std::string code;
            while (ss >> code) {
                entry.relation.chain_orientations.push_back(orientation_from_code(code));
            }
        } else if (tag == "ata") {
            entry.ranges.at_a = read_record(ss);
        } else if (tag == "atb") {
            entry.ranges.at_b = read_record(ss);
        } else if (tag == "cta") {
            if (!entry.criterion) entry.criterion = AngularBouncingRange{};
            entry.criterion->at_a = read_record(ss);
        } else if (tag == "ctb") {
            if (!entry.criterion) entry.criterion = AngularBouncingRange{};
            entry.criterion->at_b = read_record(ss);
        } else if (tag == "sub") {
            std::array<double, 2> sub{};
            ss >> sub[0] >> sub[1];
            entry.subranges.push_back(sub);
        } else if (tag == "blocker") {
            std::string id;
            ss >> id;
            entry.blockers.push_back(id);
        } else if (tag == "img") {
            Vec3 p;
            ss >> p.x >> p.y >> p.z;
            entry.aim_image.push_back(p);
        } else if (tag == "end") {
            matrix.add(std::move(entry));
            entry = InterVisEntry{};
            in_entry = false;
        } else {
            throw VisibilityError("unknown tag '" + tag + "' in matrix file");
        }
    }
    return matrix;
}

}  // namespace rt
