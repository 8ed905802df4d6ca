// SPDX-License-Identifier: Apache-2.0

#ifndef RT_EM_HPP
#define RT_EM_HPP

#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "rt/raytracer.hpp"
#include "rt/scene.hpp"

namespace rt {

class EmError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Scalar polarization of the field against each interaction surface. The
/// default treats the field as transverse-electric at every surface (vertical
/// polarization against vertical walls); a full per-surface vector
/// decomposition is out of scope.
enum class Polarization { TE, TM };

struct EmConfig {
    double frequency = 5.5e9;  ///< Hz
    double tx_gain_dbi = 0.0;  ///< fixed scalar antenna gain, transmit end
    double rx_gain_dbi = 0.0;  ///< fixed scalar antenna gain, receive end
    Polarization polarization = Polarization::TE;
};

/// Free-space amplitude of an isotropic link: magnitude lambda/(4*pi*d),
/// phase exp(-j*2*pi*d/lambda). Throws EmError for non-positive inputs.
std::complex<double> free_space_gain(double d, double f);

/// 20*log10(4*pi*d/lambda), the positive free-space loss in dB.
double free_space_loss_db(double d, double f);

/// Reflection coefficient for a plane wave hitting a half-space of the given
/// material, with complex permittivity eps_r - j*sigma/(2*pi*f*eps0).
/// theta_i is measured from the surface normal, in radians, within
/// [0, pi/2); exactly grazing input throws EmError.
std::complex<double> fresnel_reflection(double theta_i, const Material& material, double f,
                                        Polarization pol);

/// Edge-fixed wedge coordinates of one diffraction. The exterior of the wedge
/// spans azimuth [0, n*pi] measured from the 0-face; both rays are given by
/// their azimuth and the skew angle beta against the edge.
struct WedgeGeometry {
    double n = 1.5;     ///< exterior angle / pi; 2 = knife edge, 1.5 = box edge
    double phi_i = 0.0; ///< incidence azimuth from the 0-face, radians
    double phi_d = 0.0; ///< diffraction azimuth from the 0-face, radians
    double beta = 1.5707963267948966;  ///< skew angle between ray and edge
    double s_i = 1.0;   ///< source-to-edge distance, metres
    double s_d = 1.0;   ///< edge-to-receiver distance, metres
};

/// Wedge coordinates of the diffraction at `at` on `edge` for the ray
/// prev -> at -> next, using the edge's first adjacent face as the 0-face.
WedgeGeometry wedge_geometry(const Scene& scene, const Edge& edge, const Vec3& prev,
                             const Vec3& at, const Vec3& next);

/// Transition function F(X) = 2j*sqrt(X)*exp(jX) * integral_{sqrt(X)}^inf
/// exp(-j*tau^2) dtau, evaluated with series/asymptotic Fresnel integrals.
std::complex<double> transition_function(double x);

/// Scalar wedge diffraction coefficient (spreading not included) with the
/// transition-function smoothing that keeps the total field continuous across
/// the shadow boundaries; the two reflection-boundary terms are weighted by
/// the face material's reflection coefficient. Throws EmError on degenerate
/// wedges (n <= 1) and non-positive distances or frequency.
std::complex<double> utd_diffraction(const WedgeGeometry& g, const Material& material, double f,
                                     Polarization pol = Polarization::TE);

/// Complex amplitude of one traced path, relative to unit transmit power and
/// the configured antenna gains.
struct RayGain {
    std::complex<double> amplitude;
    double delay = 0.0;   ///< seconds
    std::string path_id;  ///< Path::identity() of the originating path
};

struct ChannelStats {
    bool outage = false;  ///< no ray reached the receiver
    double path_loss_db = std::numeric_limits<double>::infinity();
    double rms_delay_spread = 0.0;  ///< seconds
    std::vector<RayGain> rays;
};

/// Complex gain of every path: free-space spreading over the unfolded length,
/// one Fresnel coefficient per reflection, and the UTD coefficient with its
/// spreading factor for a final diffraction.
std::vector<RayGain> ray_gains(const Scene& scene, const std::vector<Path>& paths,
                               const EmConfig& config);

/// Path loss -10*log10(sum |a|^2) and power-weighted RMS delay spread. An
/// empty ray list returns the outage marker (infinite loss) instead of
/// throwing.
ChannelStats channel_stats(const std::vector<RayGain>& rays);

/// CSV export, columns: index,path_loss_dB,rms_ds_ns,n_paths.
std::string stats_csv(const std::vector<ChannelStats>& stats);

/// CSV export of an empirical distribution, columns: value,cum_prob. Values
/// are sorted ascending; infinite values (outages) are dropped.
std::string cdf_csv(std::vector<double> values);

}  // namespace rt

#endif
