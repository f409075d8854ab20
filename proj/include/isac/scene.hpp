// scene.hpp - array geometry, sensing targets, channel gains, and the
// communication scattering scene
//
// All antennas sit on the z = 0 plane; targets and scatterers live above it
// (z > 0). Gains are unit-variance complex Gaussian under three environment
// models: fully correlated across antennas, spatially uncorrelated (SUC), and
// SUC with a subset of Tx-target paths nulled (spatial non-stationarity).
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "isac/rng.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

struct ArrayGeometry {
  std::vector<Vec3> tx_positions;
  std::vector<Vec3> rx_positions;

  int n_tx() const { return static_cast<int>(tx_positions.size()); }
  int n_rx() const { return static_cast<int>(rx_positions.size()); }

  // Linear Tx array along x with half-wavelength spacing starting at the
  // origin; n_rx receive antennas on the corners of a square of side d_rx
  // (n_rx = 4 in the default setup; other counts are placed on a circle of
  // radius d_rx/sqrt(2)).
  static ArrayGeometry standard(int n_tx, int n_rx, double lambda, double d_rx);

  // Throws if any antenna leaves the z = 0 plane.
  void validate() const;
};

struct Target {
  Vec3 position;  // z > 0
  Vec3 velocity;  // m/s
};

struct Scene {
  std::vector<Target> targets;
  int target_count() const { return static_cast<int>(targets.size()); }
};

enum class GainKind { correlated, suc, sns };

struct GainModel {
  GainKind kind = GainKind::suc;
  int n_null = 0;  // number of zeroed Tx-target paths (sns only)
};

// Complex gain tensor restricted to the sensing antenna pairs:
// alpha[n](j, l) is the gain of the path (sensing antenna n, Rx j, target l).
using GainTensor = std::vector<Eigen::MatrixXcd>;

GainTensor draw_gains(const GainModel& model, int targets, int n_sensing, int n_rx, Rng& rng);

// Sum of the two legs of the target-to-antenna path, divided by c.
double bistatic_delay(const Vec3& target, const Vec3& tx, const Vec3& rx);

// Time derivative of the bistatic distance at t = 0:
// (unit(target - tx) + unit(target - rx))^T velocity.
double bistatic_range_rate(const Vec3& target, const Vec3& velocity, const Vec3& tx,
                           const Vec3& rx);

// Near-field steering vector over the transmit array, referenced to the
// array origin; element i = exp(-j 2 pi f_c (||p - p_i|| - ||p||)/c)/sqrt(N).
Eigen::VectorXcd near_field_steering(const Vec3& point, const std::vector<Vec3>& tx_positions,
                                     double f_c);

// Target-draw distributions (spherical coordinates around the array origin,
// z = r cos(theta) > 0 for theta in (0, pi/2)).
struct SceneDistribution {
  double r_min = 5.0, r_max = 10.0;           // m
  double theta_min = 0.0, theta_max = kPi / 2;  // elevation [rad]
  double phi_min = 0.0, phi_max = kTwoPi;       // azimuth [rad]
  double speed_component_max = 100.0 / 3.6;     // each velocity component ~ U(0, 100 km/h)
};

// Draw a random scene; scenes whose maximum bistatic delay reaches the guard
// interval are rejected and redrawn (throws after max_attempts).
Scene draw_scene(const SceneDistribution& dist, int targets, const ArrayGeometry& geometry,
                 const WaveformConfig& cfg, Rng& rng, int max_attempts = 1000);

double max_bistatic_delay(const Scene& scene, const ArrayGeometry& geometry);

// Downlink scattering environment between the station and one single-antenna
// user terminal.
struct CommScene {
  std::vector<Vec3> scatterer_positions;
  Vec3 ut_position = Vec3::Zero();
  Eigen::VectorXcd gains;  // one complex gain per scatterer
  int l_common = 0;        // leading scatterers shared with the sensing scene

  int scatterer_count() const { return static_cast<int>(scatterer_positions.size()); }
};

// Draw a communication scene; the first l_common scatterers reuse sensing
// target positions, the rest are drawn fresh from dist. Scatterer delays must
// fit in the length-G cyclic prefix (rejected and redrawn otherwise).
CommScene draw_comm_scene(const SceneDistribution& dist, int scatterers, int l_common,
                          const Scene& sensing_scene, const Vec3& ut_position,
                          const ArrayGeometry& geometry, const WaveformConfig& cfg, int G,
                          Rng& rng, int max_attempts = 1000);

// Propagation delay from the station origin via scatterer to the terminal.
double comm_path_delay(const Vec3& scatterer, const Vec3& ut);

// Channel impulse response sampled at multiples of 1/B: G taps, each a
// complex vector over the transmit array. Pulse shaping is the normalized
// sinc matching the brick-wall band assumption.
std::vector<Eigen::VectorXcd> comm_cir_taps(const CommScene& scene,
                                            const ArrayGeometry& geometry,
                                            const WaveformConfig& cfg, int G);

// Normalized G-point DFT of the taps (frequency-domain channel vectors).
std::vector<Eigen::VectorXcd> comm_channel_fd(const std::vector<Eigen::VectorXcd>& taps);

}  // namespace isac
