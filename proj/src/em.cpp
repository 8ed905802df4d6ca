// SPDX-License-Identifier: Apache-2.0

#include "rt/em.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

namespace rt {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEps0 = 8.8541878128e-12;  // vacuum permittivity, F/m
const std::complex<double> kJ{0.0, 1.0};

std::complex<double> complex_permittivity(const Material& m, double f) {
    return {m.permittivity, -m.conductivity / (2.0 * kPi * f * kEps0)};
}

/// Integral of exp(-j tau^2) from x to infinity, x >= 0. Power series around
/// zero below the crossover, integration-by-parts asymptotics above; the
/// crossover at 4.5 balances series cancellation against asymptotic
/// truncation (|error| < 1e-8 everywhere, checked against quadrature).
std::complex<double> fresnel_tail(double x) {
    static const std::complex<double> kFull =
        std::sqrt(2.0 * kPi) / 4.0 * std::complex<double>{1.0, -1.0};
    if (x < 4.5) {
        // integral 0..x = sum_k (-j)^k x^(2k+1) / (k! (2k+1))
        std::complex<double> sum = 0.0;
        std::complex<double> term{x, 0.0};  // k = 0 numerator x^(2k+1)/k!
        for (int k = 0; k < 120; ++k) {
            sum += term / double(2 * k + 1);
            term *= -kJ * x * x / double(k + 1);
            if (std::abs(term) < 1e-18 && k > 8) break;
        }
        return kFull - sum;
    }
    // exp(-j x^2)/(2jx) * sum_m (2m-1)!! (-1)^m / (2j x^2)^m
    const std::complex<double> lead = std::exp(-kJ * x * x) / (2.0 * kJ * x);
    std::complex<double> sum = 1.0;
    std::complex<double> term = 1.0;
    for (int m = 1; m < 24; ++m) {
        term *= -double(2 * m - 1) / (2.0 * kJ * x * x);
        if (std::abs(term) > 1.0) break;  // asymptotic divergence guard
        sum += term;
        if (std::abs(term) < 1e-18) break;
    }
    return lead * sum;
}

double cot(double x) { return std::cos(x) / std::sin(x); }

/// One cotangent term of the wedge coefficient, smoothed by the transition
/// function; near its shadow/reflection boundary the pole cancels against the
/// small-argument transition behaviour, evaluated via the analytic limit.
std::complex<double> wedge_term(double n, double beta, double sign, double kL) {
    // sign = +1 pairs with a+(beta), sign = -1 with a-(beta).
    const double big_n = std::round((sign * kPi + beta) / (2.0 * n * kPi));
    const double a = 2.0 * std::pow(std::cos((2.0 * n * kPi * big_n - beta) / 2.0), 2);
    const double arg = (kPi + sign * beta) / (2.0 * n);
    const double eps = kPi + sign * (beta - 2.0 * n * kPi * big_n);
    if (std::abs(std::sin(arg)) < 1e-5) {
        // Kouyoumjian-Pathak boundary limit of cot(arg) * F(kL a).
        const std::complex<double> e4 = std::exp(kJ * kPi / 4.0);
        return n * e4 *
               (std::sqrt(2.0 * kPi * kL) * (eps >= 0 ? 1.0 : -1.0) -
                2.0 * kL * eps * e4);
    }
    return cot(arg) * transition_function(kL * a);
}

}  // namespace

std::complex<double> transition_function(double x) {
    if (x < 0) throw EmError("transition function argument must be non-negative");
    if (x == 0) return 0.0;
    const double r = std::sqrt(x);
    return 2.0 * kJ * r * std::exp(kJ * x) * fresnel_tail(r);
}

std::complex<double> free_space_gain(double d, double f) {
    if (d <= 0) throw EmError("free-space distance must be positive");
    if (f <= 0) throw EmError("frequency must be positive");
    const double lambda = kSpeedOfLight / f;
    const double mag = lambda / (4.0 * kPi * d);
    const double phase = -2.0 * kPi * d / lambda;
    return std::polar(mag, phase);
}

double free_space_loss_db(double d, double f) {
    if (d <= 0) throw EmError("free-space distance must be positive");
    if (f <= 0) throw EmError("frequency must be positive");
    return 20.0 * std::log10(4.0 * kPi * d * f / kSpeedOfLight);
}

std::complex<double> fresnel_reflection(double theta_i, const Material& material, double f,
                                        Polarization pol) {
    if (f <= 0) throw EmError("frequency must be positive");
    if (theta_i < 0 || theta_i >= kPi / 2.0) {
        throw EmError("incidence angle must lie in [0, pi/2)");
    }
    const std::complex<double> eps = complex_permittivity(material, f);
    const double ct = std::cos(theta_i);
    const double st = std::sin(theta_i);
    const std::complex<double> root = std::sqrt(eps - st * st);
    if (pol == Polarization::TE) {
        return (ct - root) / (ct + root);
    }
    return (root - eps * ct) / (root + eps * ct);
}

WedgeGeometry wedge_geometry(const Scene& scene, const Edge& edge, const Vec3& prev,
                             const Vec3& at, const Vec3& next) {
    const Face& f0 = scene.face(edge.faces[0]);
    const Face& f1 = scene.face(edge.faces[1]);
    const Vec3 e = normalized(edge.b - edge.a);

    WedgeGeometry g;
    const double dotn = std::clamp(dot(f0.poly.normal, f1.poly.normal), -1.0, 1.0);
    // Interior dihedral angle of a convex building edge; the wedge exterior
    // spans the rest of the full turn.
    const double interior = kPi - std::acos(dotn);
    g.n = (2.0 * kPi - interior) / kPi;

    // Edge-fixed frame: w0 points from the edge line into face 0, n0 opens
    // the exterior sweep; azimuths are measured from w0 towards n0.
    const Vec3 c0 = f0.poly.centroid();
    const Vec3 foot = edge.a + e * dot(c0 - edge.a, e);
    Vec3 w0 = c0 - foot;
    w0 = normalized(w0 - e * dot(w0, e));
    const Vec3 n0 = f0.poly.normal;

    auto azimuth = [&](const Vec3& dir) {
        const Vec3 p = dir - e * dot(dir, e);
        double phi = std::atan2(dot(p, n0), dot(p, w0));
        if (phi < 0) phi += 2.0 * kPi;
        return phi;
    };

    const Vec3 si = at - prev;
    const Vec3 sd = next - at;
    g.s_i = norm(si);
    g.s_d = norm(sd);
    const Vec3 shat = normalized(si);
    g.beta = std::acos(std::clamp(std::abs(dot(shat, e)), 0.0, 1.0));
    g.phi_i = azimuth(prev - at);
    g.phi_d = azimuth(next - at);
    return g;
}

std::complex<double> utd_diffraction(const WedgeGeometry& g, const Material& material, double f,
                                     Polarization pol) {
    if (f <= 0) throw EmError("frequency must be positive");
    if (!(g.n > 1.0) || g.n > 2.0 + 1e-9) {
        throw EmError("degenerate wedge: exterior parameter must lie in (1, 2]");
    }
    if (g.s_i <= 0 || g.s_d <= 0) throw EmError("wedge distances must be positive");
    const double sb = std::sin(g.beta);
    if (sb <= 1e-9) throw EmError("ray parallel to the diffracting edge");

    const double k = 2.0 * kPi * f / kSpeedOfLight;
    const double L = g.s_i * g.s_d / (g.s_i + g.s_d) * sb * sb;
    const double kL = k * L;

    const double bm = g.phi_d - g.phi_i;
    const double bp = g.phi_d + g.phi_i;

    // Reflection-boundary terms carry the face reflection coefficients so the
    // perfectly-conducting limit recovers the classical solution.
    auto grazing_fold = [](double phi) {
        double gz = std::fmod(phi, kPi);
        if (gz < 0) gz += kPi;
        if (gz > kPi / 2.0) gz = kPi - gz;
        return gz;
    };
    const double th0 = std::clamp(kPi / 2.0 - grazing_fold(g.phi_i), 0.0, kPi / 2.0 - 1e-9);
    const double thn = std::clamp(kPi / 2.0 - grazing_fold(g.n * kPi - g.phi_d), 0.0,
                                  kPi / 2.0 - 1e-9);
    const std::complex<double> r0 = fresnel_reflection(th0, material, f, pol);
    const std::complex<double> rn = fresnel_reflection(thn, material, f, pol);

    const std::complex<double> amp =
        -std::exp(-kJ * kPi / 4.0) / (2.0 * g.n * std::sqrt(2.0 * kPi * k) * sb);
    // The term singular at the 0-face reflection boundary (phi_d + phi_i = pi)
    // is the minus branch, so it carries the 0-face coefficient; the plus
    // branch covers the n-face boundary at phi_d + phi_i = (2n - 1) pi.
    return amp * (wedge_term(g.n, bm, +1.0, kL) + wedge_term(g.n, bm, -1.0, kL) +
                  rn * wedge_term(g.n, bp, +1.0, kL) + r0 * wedge_term(g.n, bp, -1.0, kL));
}

std::vector<RayGain> ray_gains(const Scene& scene, const std::vector<Path>& paths,
                               const EmConfig& config) {
    if (config.frequency <= 0) throw EmError("frequency must be positive");
    const double f = config.frequency;
    const double lambda = kSpeedOfLight / f;
    const double k = 2.0 * kPi / lambda;
    const double gain =
        std::pow(10.0, config.tx_gain_dbi / 20.0) * std::pow(10.0, config.rx_gain_dbi / 20.0);

    std::vector<RayGain> rays;
    rays.reserve(paths.size());
    for (const Path& p : paths) {
        std::complex<double> a;
        const bool diffracted =
            !p.interactions.empty() && p.interactions.back().kind == InteractionKind::Diffraction;
        if (!diffracted) {
            a = free_space_gain(p.length, f);
        } else {
            // Spreading of a spherical wave over the incident run, then the
            // UTD edge factor sqrt(s_i / (s_d (s_i + s_d))).
            const double s_d = distance(p.points[p.points.size() - 2], p.receiver);
            const double s_i = p.length - s_d;
            const double mag = lambda / (4.0 * kPi) / std::sqrt(s_i * s_d * (s_i + s_d));
            a = std::polar(mag, -k * p.length);
        }
        // One Fresnel coefficient per reflection, with the incidence angle
        // taken against the face normal.
        for (size_t i = 0; i < p.interactions.size(); ++i) {
            const Interaction& ia = p.interactions[i];
            if (ia.kind == InteractionKind::Reflection) {
                const Face& face = scene.face(ia.id);
                const Vec3 dir = normalized(ia.point - p.points[i]);
                const double ct = std::clamp(std::abs(dot(dir, face.poly.normal)), 0.0, 1.0);
                const double theta = std::acos(ct);
                a *= fresnel_reflection(std::min(theta, kPi / 2.0 - 1e-9),
                                        scene.material(face.material), f, config.polarization);
            } else {
                const Edge* edge = nullptr;
                for (const Edge& e : scene.edges()) {
                    if (e.id == ia.id) {
                        edge = &e;
                        break;
                    }
                }
                if (!edge) throw EmError("path references unknown edge '" + ia.id + "'");
                const WedgeGeometry g =
                    wedge_geometry(scene, *edge, p.points[p.points.size() - 3], ia.point,
                                   p.receiver);
                const Face& f0 = scene.face(edge->faces[0]);
                a *= utd_diffraction(g, scene.material(f0.material), f, config.polarization);
            }
        }
        rays.push_back({a * gain, p.delay, p.identity()});
    }
    return rays;
}

ChannelStats channel_stats(const std::vector<RayGain>& rays) {
    ChannelStats stats;
    stats.rays = rays;
    if (rays.empty()) {
        stats.outage = true;
        return stats;
    }
    double power = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
    for (const RayGain& r : rays) {
        const double p = std::norm(r.amplitude);
        power += p;
        m1 += p * r.delay;
        m2 += p * r.delay * r.delay;
    }
    if (power <= 0) {
        stats.outage = true;
        return stats;
    }
    stats.outage = false;
    stats.path_loss_db = -10.0 * std::log10(power);
    m1 /= power;
    m2 /= power;
    stats.rms_delay_spread = std::sqrt(std::max(0.0, m2 - m1 * m1));
    return stats;
}

std::string stats_csv(const std::vector<ChannelStats>& stats) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os << "index,path_loss_dB,rms_ds_ns,n_paths\n";
    for (size_t i = 0; i < stats.size(); ++i) {
        const ChannelStats& s = stats[i];
        os << i << ",";
        if (s.outage) {
            os << "inf,";
        } else {
            os.precision(6);
            os << s.path_loss_db << ",";
        }
        os.precision(6);
        os << s.rms_delay_spread * 1e9 << "," << s.rays.size() << "\n";
    }
    return os.str();
}

std::string cdf_csv(std::vector<double> values) {
    values.erase(std::remove_if(values.begin(), values.end(),
                                [](double v) { return !std::isfinite(v); }),
                 values.end());
    std::sort(values.begin(), values.end());
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(9);
    os << "value,cum_prob\n";
    const double n = static_cast<double>(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        os << values[i] << "," << (static_cast<double>(i) + 1.0) / n << "\n";
    }
    return os.str();
}

}  // namespace rt
