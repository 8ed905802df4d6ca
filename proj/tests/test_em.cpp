#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rt/em.hpp"
#include "rt/raytracer.hpp"
#include "rt/scene.hpp"
#include "rt/vismatrix.hpp"
#include "rt/vistable.hpp"

using rt::Vec3;
using C = std::complex<double>;

namespace {

constexpr double kPi = std::numbers::pi;
const C kJ{0.0, 1.0};

std::string fixture(const std::string& name) {
    return std::string(VISRT_DATA_DIR) + "/fixtures/" + name;
}

/// Independent quadrature oracle for the transition function: Simpson
/// integration of exp(-j tau^2) over [0, sqrt(x)] subtracted from the known
/// full-line value sqrt(2 pi)/4 * (1 - j).
C quadrature_transition(double x) {
    const double r = std::sqrt(x);
    const int n = 200000;
    const double h = r / n;
    C sum = 1.0 + std::exp(-kJ * r * r);
    for (int i = 1; i < n; ++i) {
        const double t = i * h;
        sum += (i % 2 ? 4.0 : 2.0) * std::exp(-kJ * t * t);
    }
    const C full = std::sqrt(2.0 * kPi) / 4.0 * C{1.0, -1.0};
    return 2.0 * kJ * r * std::exp(kJ * x) * (full - sum * h / 3.0);
}

/// Total field near a wedge: the edge contribution plus whichever geometric
/// rays are lit. Built in the plane perpendicular to the edge, 0-face along
/// azimuth zero, exterior sweeping counterclockwise to n*pi.
struct WedgeSetup {
    double n, phi_i, s_i, s_d, f;
    rt::Material mat;
    rt::Polarization pol;
};

C total_field(const WedgeSetup& c, double phi_d) {
    const double k = 2.0 * kPi * c.f / rt::kSpeedOfLight;
    rt::WedgeGeometry w;
    w.n = c.n;
    w.phi_i = c.phi_i;
    w.phi_d = phi_d;
    w.beta = kPi / 2.0;
    w.s_i = c.s_i;
    w.s_d = c.s_d;
    C u = std::exp(-kJ * k * w.s_i) / w.s_i * rt::utd_diffraction(w, c.mat, c.f, c.pol) *
          std::sqrt(w.s_i / (w.s_d * (w.s_i + w.s_d))) * std::exp(-kJ * k * w.s_d);
    const double sx = c.s_i * std::cos(c.phi_i), sy = c.s_i * std::sin(c.phi_i);
    const double rx = c.s_d * std::cos(phi_d), ry = c.s_d * std::sin(phi_d);
    if (phi_d < c.phi_i + kPi) {  // direct ray lit
        const double r = std::hypot(rx - sx, ry - sy);
        u += std::exp(-kJ * k * r) / r;
    }
    if (phi_d < kPi - c.phi_i) {  // specular ray off the 0-face
        const double r = std::hypot(rx - sx, ry + sy);
        const double ct = std::min(std::abs((ry + sy) / r), 1.0);
        u += rt::fresnel_reflection(std::acos(ct), c.mat, c.f, c.pol) *
             std::exp(-kJ * k * r) / r;
    }
    if (phi_d > (2.0 * c.n - 1.0) * kPi - c.phi_i) {  // specular ray off the n-face
        const double a2 = 2.0 * c.n * kPi;
        const double ix = sx * std::cos(a2) + sy * std::sin(a2);
        const double iy = sx * std::sin(a2) - sy * std::cos(a2);
        const double r = std::hypot(rx - ix, ry - iy);
        const double nx = std::cos(c.n * kPi - kPi / 2.0);
        const double ny = std::sin(c.n * kPi - kPi / 2.0);
        const double ct = std::min(std::abs(((rx - ix) * nx + (ry - iy) * ny) / r), 1.0);
        u += rt::fresnel_reflection(std::acos(ct), c.mat, c.f, c.pol) *
             std::exp(-kJ * k * r) / r;
    }
    return u;
}

double boundary_jump_pct(const WedgeSetup& c, double boundary, double eps) {
    const double lit = std::abs(total_field(c, boundary - eps));
    const double shadow = std::abs(total_field(c, boundary + eps));
    return 200.0 * std::abs(lit - shadow) / (lit + shadow);
}

}  // namespace

TEST_SUITE("em") {

TEST_CASE("free-space loss follows the spreading law") {
    const double f = 5.5e9;
    const double analytic = 20.0 * std::log10(4.0 * kPi * 1.0 * f / rt::kSpeedOfLight);
    CHECK(std::abs(rt::free_space_loss_db(1.0, f) - analytic) < 1e-12);
    CHECK(std::abs(rt::free_space_loss_db(1.0, f) - 47.2550370118) < 1e-9);
    CHECK(rt::free_space_loss_db(1.0, f) == doctest::Approx(47.2550).epsilon(0.01 / 47.2550));

    // +6.0206 dB per doubling of either distance or frequency.
    const double per_doubling = 20.0 * std::log10(2.0);
    CHECK(std::abs(rt::free_space_loss_db(2.0, f) - rt::free_space_loss_db(1.0, f) -
                   per_doubling) < 1e-9);
    CHECK(std::abs(rt::free_space_loss_db(64.0, f) - rt::free_space_loss_db(1.0, f) -
                   6.0 * per_doubling) < 1e-9);
    CHECK(std::abs(rt::free_space_loss_db(1.0, 2.0 * f) - rt::free_space_loss_db(1.0, f) -
                   per_doubling) < 1e-9);

    // The complex gain agrees with the dB form, and one wavelength of travel
    // is a full phase turn.
    for (double d : {0.7, 1.0, 13.0, 420.0}) {
        const double from_gain = -20.0 * std::log10(std::abs(rt::free_space_gain(d, f)));
        CHECK(std::abs(from_gain - rt::free_space_loss_db(d, f)) < 1e-12);
    }
    const double lambda = rt::kSpeedOfLight / f;
    const C g = rt::free_space_gain(lambda, f);
    CHECK(std::abs(g.real() - 1.0 / (4.0 * kPi)) < 1e-15);
    CHECK(std::abs(g.imag()) < 1e-12);

    CHECK_THROWS_AS(rt::free_space_gain(0.0, f), rt::EmError);
    CHECK_THROWS_AS(rt::free_space_gain(-2.0, f), rt::EmError);
    CHECK_THROWS_AS(rt::free_space_gain(1.0, 0.0), rt::EmError);
    CHECK_THROWS_AS(rt::free_space_loss_db(0.0, f), rt::EmError);
    CHECK_THROWS_AS(rt::free_space_loss_db(1.0, -1.0), rt::EmError);
}

TEST_CASE("reflection coefficients stay physical") {
    const rt::Material glass{"glass", 4.0, 0.0};
    const double f = 5.5e9;

    // Normal incidence on a lossless eps=4 half-space: (1-2)/(1+2) in the
    // convention where both polarizations coincide head-on.
    const C te0 = rt::fresnel_reflection(0.0, glass, f, rt::Polarization::TE);
    const C tm0 = rt::fresnel_reflection(0.0, glass, f, rt::Polarization::TM);
    CHECK(std::abs(te0 - C{-1.0 / 3.0, 0.0}) < 1e-14);
    CHECK(std::abs(tm0 - C{-1.0 / 3.0, 0.0}) < 1e-14);

    // The parallel component vanishes at the polarizing angle atan(sqrt(eps)).
    const C brewster = rt::fresnel_reflection(std::atan(2.0), glass, f, rt::Polarization::TM);
    CHECK(std::abs(brewster) < 1e-12);

    // A very good conductor reflects (almost) everything with a sign flip.
    const rt::Material metal{"metal", 1.0, 1e9};
    for (double deg : {0.0, 30.0, 60.0, 85.0}) {
        const double th = deg * kPi / 180.0;
        CHECK(std::abs(rt::fresnel_reflection(th, metal, f, rt::Polarization::TE) + 1.0) < 1e-3);
        CHECK(std::abs(rt::fresnel_reflection(th, metal, f, rt::Polarization::TM) + 1.0) < 1e-3);
    }

    // Grazing incidence reflects totally.
    const double grazing = 89.99 * kPi / 180.0;
    CHECK(std::abs(rt::fresnel_reflection(grazing, glass, f, rt::Polarization::TE)) > 0.999);

    // Passive half-spaces never amplify, whatever the angle, loss, or band.
    std::mt19937 rng(8101);
    std::uniform_real_distribution<double> uth(0.0, kPi / 2.0 - 1e-6);
    std::uniform_real_distribution<double> ueps(1.0, 15.0);
    std::uniform_real_distribution<double> usig(0.0, 10.0);
    std::uniform_real_distribution<double> ufreq(0.5e9, 100e9);
    for (int i = 0; i < 1000; ++i) {
        const rt::Material m{"m", ueps(rng), usig(rng)};
        const auto pol = i % 2 ? rt::Polarization::TE : rt::Polarization::TM;
        const C r = rt::fresnel_reflection(uth(rng), m, ufreq(rng), pol);
        CHECK(std::abs(r) <= 1.0 + 1e-12);
    }

    CHECK_THROWS_AS(rt::fresnel_reflection(kPi / 2.0, glass, f, rt::Polarization::TE),
                    rt::EmError);
    CHECK_THROWS_AS(rt::fresnel_reflection(-0.1, glass, f, rt::Polarization::TE), rt::EmError);
    CHECK_THROWS_AS(rt::fresnel_reflection(0.3, glass, 0.0, rt::Polarization::TE), rt::EmError);
}

TEST_CASE("transition function matches direct quadrature") {
    for (double x : {0.01, 0.1, 0.5, 1.0, 5.0, 16.0, 19.0, 22.0, 50.0}) {
        const C got = rt::transition_function(x);
        const C want = quadrature_transition(x);
        CHECK(std::abs(got - want) < 1e-7);
    }

    CHECK(rt::transition_function(0.0) == C{0.0, 0.0});
    // No seam where the evaluation switches between its two expansions.
    CHECK(std::abs(rt::transition_function(20.25 - 1e-9) -
                   rt::transition_function(20.25 + 1e-9)) < 1e-7);
    // Far from the boundary the smoothing factor fades out...
    CHECK(std::abs(rt::transition_function(1000.0) - 1.0) < 1e-3);
    // ...and it never overshoots unit magnitude.
    for (double x = 0.001; x < 300.0; x *= 1.17) {
        CHECK(std::abs(rt::transition_function(x)) <= 1.0 + 1e-9);
    }
    CHECK_THROWS_AS(rt::transition_function(-1e-9), rt::EmError);
}

TEST_CASE("box edges map to right-angle wedge frames") {
    const rt::Scene scene = rt::load_scene(fixture("two_buildings.json"));
    const rt::Edge* top = nullptr;
    for (const rt::Edge& e : scene.edges()) {
        const bool wall = e.faces[0] == "B1_n" || e.faces[1] == "B1_n";
        const bool roof = e.faces[0] == "B1_roof" || e.faces[1] == "B1_roof";
        if (wall && roof) top = &e;
    }
    REQUIRE(top != nullptr);
    CHECK(top->a.z == 30.0);
    CHECK(top->b.z == 30.0);

    // Symmetric crossing rays in the plane perpendicular to the edge.
    const Vec3 at{5, 10, 30};
    const rt::WedgeGeometry w =
        rt::wedge_geometry(scene, *top, Vec3{5, 20, 40}, at, Vec3{5, 20, 20});
    CHECK(std::abs(w.n - 1.5) < 1e-12);  // 90-degree interior, 270 exterior
    CHECK(std::abs(w.phi_i - 3.0 * kPi / 4.0) < 1e-12);
    CHECK(std::abs(w.phi_d - kPi / 4.0) < 1e-12);
    CHECK(std::abs(w.beta - kPi / 2.0) < 1e-12);
    CHECK(std::abs(w.s_i - std::sqrt(200.0)) < 1e-12);
    CHECK(std::abs(w.s_d - std::sqrt(200.0)) < 1e-12);
    CHECK(w.phi_i >= 0.0);
    CHECK(w.phi_i <= w.n * kPi);
    CHECK(w.phi_d >= 0.0);
    CHECK(w.phi_d <= w.n * kPi);

    // A ray arriving at 1:3 slope along the edge keeps that skew angle.
    const rt::WedgeGeometry skew =
        rt::wedge_geometry(scene, *top, Vec3{0, 20, 40}, at, Vec3{5, 20, 20});
    CHECK(std::abs(skew.beta - std::acos(1.0 / 3.0)) < 1e-12);
}

TEST_CASE("the edge term keeps the total field continuous across lit boundaries") {
    const rt::Material concrete{"concrete", 5.31, 0.139};
    const rt::Material brick{"brick", 6.5, 0.668};
    struct Probe {
        WedgeSetup setup;
        double boundary;
    };
    const Probe probes[] = {
        // direct-ray shadowing on a box edge
        {{1.5, kPi / 6, 100.0, 1.0, 5.5e9, concrete, rt::Polarization::TE}, kPi + kPi / 6},
        // specular boundary of the 0-face
        {{1.5, kPi / 6, 100.0, 1.0, 5.5e9, concrete, rt::Polarization::TE}, kPi - kPi / 6},
        // specular boundary of the n-face
        {{1.5, 0.75 * kPi, 100.0, 1.0, 5.5e9, concrete, rt::Polarization::TE}, 1.25 * kPi},
        // parallel polarization
        {{1.5, kPi / 6, 100.0, 1.0, 5.5e9, concrete, rt::Polarization::TM}, kPi - kPi / 6},
        // near-grazing lossy case on an almost-flat wedge, mmWave band
        {{1.9, 0.4, 30.0, 2.0, 28e9, brick, rt::Polarization::TE}, kPi - 0.4},
    };
    for (const Probe& p : probes) {
        CAPTURE(p.boundary);
        // The jump across the boundary shrinks linearly with the straddle
        // width: the field is continuous, only its slope is steep.
        CHECK(boundary_jump_pct(p.setup, p.boundary, 1e-6) < 0.05);
        CHECK(boundary_jump_pct(p.setup, p.boundary, 1e-8) < 0.0005);
    }

    // Degenerate wedges and rays are rejected.
    rt::WedgeGeometry w;
    w.n = 1.0;
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 5.5e9), rt::EmError);
    w.n = 0.9;
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 5.5e9), rt::EmError);
    w.n = 1.5;
    w.s_i = 0.0;
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 5.5e9), rt::EmError);
    w.s_i = 1.0;
    w.s_d = -1.0;
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 5.5e9), rt::EmError);
    w.s_d = 1.0;
    w.beta = 0.0;  // ray running along the edge
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 5.5e9), rt::EmError);
    w.beta = kPi / 2.0;
    CHECK_THROWS_AS(rt::utd_diffraction(w, concrete, 0.0), rt::EmError);
}

TEST_CASE("delay spread follows the power-weighted moments") {
    // No rays at all is an outage, not an error.
    const rt::ChannelStats none = rt::channel_stats({});
    CHECK(none.outage);
    CHECK(std::isinf(none.path_loss_db));
    CHECK(none.rms_delay_spread == 0.0);

    // All-zero amplitudes carry no power, which is an outage too.
    CHECK(rt::channel_stats({{C{0, 0}, 1e-9, "a"}, {C{0, 0}, 2e-9, "b"}}).outage);

    // A lone ray has zero spread and its loss is just the amplitude.
    const rt::ChannelStats one = rt::channel_stats({{C{0.5, 0.0}, 77e-9, "solo"}});
    CHECK_FALSE(one.outage);
    CHECK(std::abs(one.path_loss_db - (-10.0 * std::log10(0.25))) < 1e-12);
    CHECK(one.rms_delay_spread == 0.0);

    // Two equal-power rays: the spread is half their separation.
    const rt::ChannelStats two =
        rt::channel_stats({{C{1.0, 0.0}, 0.0, "a"}, {C{0.0, 1.0}, 100e-9, "b"}});
    CHECK(std::abs(two.rms_delay_spread - 50e-9) < 1e-12);

    // Unequal powers 1:3, 4 ns apart: spread is sqrt(3) ns.
    const rt::ChannelStats skewed =
        rt::channel_stats({{C{1.0, 0.0}, 0.0, "a"}, {C{0.0, std::sqrt(3.0)}, 4e-9, "b"}});
    CHECK(std::abs(skewed.rms_delay_spread - std::sqrt(3.0) * 1e-9) < 1e-15);
}

TEST_CASE("traced links assemble spreading and coefficients per ray") {
    const double f = 5.5e9;
    const double lambda = rt::kSpeedOfLight / f;

    // Flat ground, classic two-ray geometry.
    const rt::Scene field = rt::load_scene(fixture("open_field.json"));
    const rt::InterVisMatrix mx = rt::build_matrix(field, 1);
    const Vec3 tx{10, 50, 10};
    const Vec3 rx{90, 50, 1.5};
    const auto paths = rt::accelerated_trace(field, mx, tx, rx, 1, true);
    REQUIRE(paths.size() == 2);

    rt::EmConfig cfg;
    const auto rays = rt::ray_gains(field, paths, cfg);
    REQUIRE(rays.size() == 2);
    CHECK(rays[0].path_id == "LOS");
    CHECK(rays[1].path_id == "R:ground");

    const double d_los = paths[0].length;
    CHECK(std::abs(std::abs(rays[0].amplitude) - lambda / (4.0 * kPi * d_los)) <
          1e-12 * std::abs(rays[0].amplitude));
    CHECK(rays[0].delay == doctest::Approx(d_los / rt::kSpeedOfLight).epsilon(1e-15));

    // The bounce ray: spreading over the unfolded run times the ground
    // coefficient at the actual grazing geometry.
    const Vec3 bounce = paths[1].interactions.front().point;
    const Vec3 down = rt::normalized(bounce - tx);
    const double theta = std::acos(std::abs(rt::dot(down, Vec3{0, 0, 1})));
    const double expect =
        std::abs(rt::fresnel_reflection(theta, field.material("concrete"), f,
                                        rt::Polarization::TE)) *
        lambda / (4.0 * kPi * paths[1].length);
    CHECK(std::abs(std::abs(rays[1].amplitude) - expect) < 1e-12 * expect);

    const rt::ChannelStats st = rt::channel_stats(rays);
    CHECK(std::abs(st.path_loss_db - 82.924680994) < 1e-6);
    CHECK(std::abs(st.rms_delay_spread - 6.143784e-10) < 1e-15);

    // Fixed antenna gains slide the loss down decibel for decibel.
    rt::EmConfig gains = cfg;
    gains.tx_gain_dbi = 3.0;
    gains.rx_gain_dbi = 5.0;
    const rt::ChannelStats boosted = rt::channel_stats(rt::ray_gains(field, paths, gains));
    CHECK(std::abs(st.path_loss_db - boosted.path_loss_db - 8.0) < 1e-9);

    // The two polarizations see different ground coefficients.
    rt::EmConfig tm = cfg;
    tm.polarization = rt::Polarization::TM;
    const rt::ChannelStats st_tm = rt::channel_stats(rt::ray_gains(field, paths, tm));
    CHECK(std::abs(st_tm.path_loss_db - st.path_loss_db) > 1e-3);

    // A bent path around a screen: spreading uses the two legs of the edge
    // hop, with the wedge coefficient of the actual scene edge.
    const rt::Scene wall = rt::load_scene(fixture("screened_wall.json"));
    const rt::InterVisMatrix m2 = rt::build_matrix(wall, 2);
    const auto bent = rt::accelerated_trace(wall, m2, Vec3{5, 30, 2}, Vec3{25, 60, 2}, 2, true);
    const auto bent_rays = rt::ray_gains(wall, bent, cfg);
    bool saw_diffraction = false;
    for (size_t i = 0; i < bent.size(); ++i) {
        const rt::Path& p = bent[i];
        if (p.interactions.size() != 1 ||
            p.interactions[0].kind != rt::InteractionKind::Diffraction) {
            continue;
        }
        saw_diffraction = true;
        const rt::Edge* edge = nullptr;
        for (const rt::Edge& e : wall.edges()) {
            if (e.id == p.interactions[0].id) edge = &e;
        }
        REQUIRE(edge != nullptr);
        const double s_d = rt::distance(p.interactions[0].point, p.receiver);
        const double s_i = p.length - s_d;
        const rt::WedgeGeometry g =
            rt::wedge_geometry(wall, *edge, p.source, p.interactions[0].point, p.receiver);
        const double want =
            std::abs(rt::utd_diffraction(g, wall.material("concrete"), f)) * lambda /
            (4.0 * kPi) / std::sqrt(s_i * s_d * (s_i + s_d));
        CHECK(std::abs(std::abs(bent_rays[i].amplitude) - want) < 1e-9 * want);
    }
    CHECK(saw_diffraction);

    // Empty path list propagates to an outage; bad config throws.
    CHECK(rt::channel_stats(rt::ray_gains(field, {}, cfg)).outage);
    rt::EmConfig bad = cfg;
    bad.frequency = 0.0;
    CHECK_THROWS_AS(rt::ray_gains(field, paths, bad), rt::EmError);
}

TEST_CASE("csv exports are stable") {
    rt::ChannelStats a;
    a.outage = false;
    a.path_loss_db = 80.5;
    a.rms_delay_spread = 12.5e-9;
    a.rays.resize(3);
    rt::ChannelStats b;
    b.outage = true;
    CHECK(rt::stats_csv({a, b}) ==
          "index,path_loss_dB,rms_ds_ns,n_paths\n"
          "0,80.500000,12.500000,3\n"
          "1,inf,0.000000,0\n");

    const double inf = std::numeric_limits<double>::infinity();
    CHECK(rt::cdf_csv({3.0, 1.0, inf, 2.0}) ==
          "value,cum_prob\n"
          "1.000000000,0.333333333\n"
          "2.000000000,0.666666667\n"
          "3.000000000,1.000000000\n");
    CHECK(rt::cdf_csv({}) == "value,cum_prob\n");
    CHECK(rt::cdf_csv({inf}) == "value,cum_prob\n");
}

}  // TEST_SUITE("em")
