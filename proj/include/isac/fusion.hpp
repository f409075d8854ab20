// fusion.hpp - fusing per-pair bistatic estimates into 3-D positions and
// velocities
//
// Each (sensing antenna, Rx antenna) pair acts as an independent bistatic
// radar; its normalized estimates convert to a bistatic range (an ellipsoid
// with the two antennas as foci) and range rate. Fusion proceeds as: robust
// outlier elimination, K-means clustering in the standardized (range, rate)
// plane, closed-form multilateration per cluster from measurements sharing a
// transmit (or receive) antenna, gradient refinement over all cluster
// members, then a least-squares solve for the full 3-D velocity.
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "isac/pair_estimation.hpp"
#include "isac/scene.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

struct BistaticMeasurement {
  double range = 0.0;       // bistatic range [m]
  double range_rate = 0.0;  // [m/s]
  Vec3 tx_pos = Vec3::Zero();
  Vec3 rx_pos = Vec3::Zero();
  int tx_index = -1;  // plan index n
  int rx_index = -1;  // receive antenna j
};

// (mu, nu) -> (bistatic range [m], range rate [m/s]).
std::pair<double, double> to_physical(double mu, double nu, const WaveformConfig& cfg);

// Flatten per-pair estimates into one measurement set.
std::vector<BistaticMeasurement> collect_measurements(const std::vector<PairEstimate>& estimates,
                                                      const SensingPlan& plan,
                                                      const ArrayGeometry& geometry,
                                                      const WaveformConfig& cfg);

// Remove points whose joint robust z-score (median absolute deviation on the
// standardized range/rate plane) exceeds the threshold. Never removes more
// than half the points; fewer than 3 points pass through unchanged.
std::vector<BistaticMeasurement> eliminate_outliers(
    const std::vector<BistaticMeasurement>& measurements, double threshold = 3.5);

// Seeded K-means (k-means++ init, 20 restarts, best inertia kept) on the
// standardized (range, rate) plane.
std::vector<std::vector<BistaticMeasurement>> cluster_measurements(
    const std::vector<BistaticMeasurement>& measurements, int cluster_count, uint64_t seed);

struct ClosedFormPosition {
  Vec3 position = Vec3::Zero();
  bool clamped = false;  // negative height radicand clamped to zero
};

// Closed-form position from >= 3 bistatic ranges sharing one antenna (the
// common end at common_pos, the per-measurement other ends in other_pos).
// Squaring the range equations gives a linear system in (x, y, distance to
// the common antenna); the height follows from the distance. The positive
// height root is taken.
// Throws std::runtime_error when the antenna geometry is rank deficient.
ClosedFormPosition closed_form_position(const Vec3& common_pos,
                                        const std::vector<Vec3>& other_pos,
                                        const Eigen::VectorXd& ranges);

// Barzilai-Borwein gradient descent on the sum of squared bistatic-range
// residuals, starting from init; the height is kept positive by reflection
// and the best-objective iterate is returned.
Vec3 position_gda(const Vec3& init, const std::vector<BistaticMeasurement>& cluster,
                  int max_iterations);

double position_objective(const Vec3& p, const std::vector<BistaticMeasurement>& cluster);
Vec3 position_gradient(const Vec3& p, const std::vector<BistaticMeasurement>& cluster);

struct VelocityFit {
  Vec3 velocity = Vec3::Zero();
  bool ok = false;  // false when fewer than 3 members or rank-deficient geometry
};

// Least-squares 3-D velocity from the cluster's range rates at the estimated
// position.
VelocityFit velocity_ls(const Vec3& position, const std::vector<BistaticMeasurement>& cluster);

struct TargetEstimate {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  int cluster = 0;
  bool closed_form_init = true;  // false: fell back to the centroid initializer
  bool velocity_ok = true;
};

struct FusionOptions {
  int gda_iterations = 10;
  double outlier_threshold = 3.5;
  int cluster_count = -1;  // -1: max over pairs of the per-pair path count
};

// Full fusion pipeline over all pair estimates.
std::vector<TargetEstimate> fuse_targets(const std::vector<PairEstimate>& estimates,
                                         const SensingPlan& plan, const ArrayGeometry& geometry,
                                         const WaveformConfig& cfg, uint64_t seed,
                                         const FusionOptions& options = {});

// CSV rows (cluster, x, y, z, vx, vy, vz, flags).
std::string target_estimates_csv(const std::vector<TargetEstimate>& targets);

}  // namespace isac
