// dechirp.hpp - mixer/LPF/ADC chain for the chirp sensing receiver
//
// Mixing a delayed permuted chirp against the conjugate reference produces a
// piecewise single-tone IF signal with three time regions: the spectrum fold
// of the delayed subcarrier sweeps through the reference band, blanking a
// window [BWS, BWE) after low-pass filtering and leaving an extra phase step
// on the trailing region. Both the closed-form IF expression and the
// digitized response vector model this blank-window-plus-phase-step shape.
//
// Two synthesis paths are provided:
//   synthesize_measurements - the analytic model (outer products of response
//                             vectors), which is what estimation assumes;
//   dechirp_oracle          - a brute-force continuous-time simulation (dense
//                             grid, explicit mixing, brick-wall LPF in the
//                             frequency domain, decimation), kept independent
//                             so it can validate the analytic path.
#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isac/scene.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

enum class IfRegionType { I, II, III };

struct IfRegion {
  IfRegionType region;
  double start = 0.0;  // [s], within the symbol
  double end = 0.0;
};

struct IfRegions {
  double bws = 0.0;  // blank-window start
  double bwe = 0.0;  // blank-window end
  std::array<IfRegion, 3> regions;
};

// Region boundaries for the mixer output of reference subcarrier n against
// (delayed) subcarrier n_prime. Indices are 0-based positions in the plan.
IfRegions if_regions(int n, int n_prime, double tau, const WaveformConfig& cfg,
                     const SensingPlan& plan);

// Closed-form IF signal value at time t in [tau, T).
Complex if_closed_form(int n, int n_prime, double tau, double t, const WaveformConfig& cfg,
                       const SensingPlan& plan);

// Direct product of the delayed and conjugate reference chirps; the oracle
// for if_closed_form.
Complex if_direct(int n, int n_prime, double tau, double t, const WaveformConfig& cfg,
                  const SensingPlan& plan);

// 1-based ADC sample indices per region for the self-pair (n, n) at delay tau.
struct ResponseSets {
  std::vector<int> region1, region2, region3;
};

ResponseSets response_sets(int k, double tau, const WaveformConfig& cfg);

// Digitized response vector b_n(mu) of length Q: sample q carries
// e^{j 2 pi mu (q-1)}, zeroed on the blank window and rotated by
// e^{-j mu phi} (phi = 2 pi f_ADC T) on the trailing region.
Eigen::VectorXcd response_vector(int n, double mu, const WaveformConfig& cfg,
                                 const SensingPlan& plan);

// Same, with region membership frozen to the given sets (used by gradients
// and Fisher-information differencing, where the integer sets are treated as
// locally constant in mu).
Eigen::VectorXcd response_vector_with_sets(const ResponseSets& sets, double mu,
                                           const WaveformConfig& cfg);

// Normalized delay locations (in mu units) where a sample enters or leaves
// the blank window; gradients are undefined there.
std::vector<double> response_breakpoints(int n, const WaveformConfig& cfg,
                                         const SensingPlan& plan);

// Ground-truth per-pair path parameters of the analytic model.
struct PathParams {
  double mu = 0.0;                  // normalized delay, B tau / (f_ADC T)
  double nu = 0.0;                  // normalized Doppler, v (T + T_GI + T_com) / lambda
  Complex amplitude{0.0, 0.0};      // includes power scaling and all static phases
};

// pair_paths[n][j] lists the paths of sensing pair (n, j); gains alpha[n](j, l).
using PairPathTable = std::vector<std::vector<std::vector<PathParams>>>;

PairPathTable true_pair_parameters(const Scene& scene, const GainTensor& gains,
                                   const SensingPlan& plan, const ArrayGeometry& geometry,
                                   const WaveformConfig& cfg);

struct MeasurementCube {
  WaveformConfig cfg;
  SensingPlan plan;
  int n_rx = 0;
  double sigma2 = 0.0;
  std::vector<Eigen::MatrixXcd> data;  // Q x M per pair, pair index n * n_rx + j

  const Eigen::MatrixXcd& at(int n, int j) const { return data[n * n_rx + j]; }
  Eigen::MatrixXcd& at(int n, int j) { return data[n * n_rx + j]; }
};

// Analytic synthesis of the digitized measurements:
// R[n,j] = sum_l amplitude * b_n(mu) a^H(nu) + CN(0, sigma2) noise.
MeasurementCube synthesize_measurements(const Scene& scene, const GainTensor& gains,
                                        const SensingPlan& plan, const ArrayGeometry& geometry,
                                        const WaveformConfig& cfg, double sigma2,
                                        uint64_t seed);

struct OracleOptions {
  int oversample = 8;              // dense grid rate = oversample * B
  bool exact_motion = false;       // move targets continuously instead of per-symbol phases
  std::vector<int> include_tx;     // restrict transmitted subcarriers (empty = all)
  long max_dense_samples = 1 << 26;  // memory guard on the per-symbol dense grid
};

// Continuous-time simulation producing a noiseless cube; independent of the
// analytic path above.
MeasurementCube dechirp_oracle(const Scene& scene, const GainTensor& gains,
                               const SensingPlan& plan, const ArrayGeometry& geometry,
                               const WaveformConfig& cfg, const OracleOptions& options = {});

// Binary dump of a cube: header (counts, noise variance, plan, config)
// followed, pair by pair, by Q x M complex values as interleaved re/im
// doubles in symbol-major (column-major) order with 1-based q within each
// column.
void write_measurement_dump(const MeasurementCube& cube, const std::string& path);
MeasurementCube read_measurement_dump(const std::string& path);

}  // namespace isac
