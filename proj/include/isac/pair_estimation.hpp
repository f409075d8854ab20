// pair_estimation.hpp - per-antenna-pair delay/Doppler estimation
//
// The digitized response vectors lose their Vandermonde structure at the
// blank window and the trailing phase step, so subspace methods cannot be
// applied to the full sample axis. Estimation therefore runs in two stages:
//   1. reduced-length 2D-ESPRIT on the largest contiguous sample block on
//      which the rows still form geometric progressions, giving initial
//      (mu, nu) per path plus least-squares amplitudes;
//   2. Barzilai-Borwein gradient descent on the full-data least-squares
//      objective, re-solving amplitudes every iteration.
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "isac/dechirp.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

struct PairEstimate {
  int n = 0, j = 0;
  Eigen::VectorXd mu;      // normalized delays in [0, 1)
  Eigen::VectorXd nu;      // normalized Dopplers in [-0.5, 0.5)
  Eigen::VectorXcd alpha;  // complex amplitudes
  // Objective of the committed (best-so-far) estimate after each iteration;
  // entry 0 is the initialization.
  std::vector<double> objective_trace;

  int path_count() const { return static_cast<int>(mu.size()); }
};

// Model order from the singular-value spectrum (MDL rule), clamped to
// [0, cap]. An all-zero matrix yields 0.
int estimate_path_count(const Eigen::MatrixXcd& measurement, int cap);

// Contiguous 1-based sample index ranges on which the response vectors stay
// geometric: "early" samples before the blank window can start, "late"
// samples after it must have ended. "initial" is the larger of the two
// (early wins ties).
struct ReducedIndexSets {
  std::vector<int> early;
  std::vector<int> late;
  std::vector<int> initial;
  bool early_chosen = false;
};

ReducedIndexSets reduced_index_sets(int n, const WaveformConfig& cfg, const SensingPlan& plan);

// Shift-invariance ESPRIT along both axes of a low-rank block whose rows and
// columns are geometric progressions, with forward spatial smoothing for
// path_count > 1 and pairing by least-squares fit over permutations
// (exhaustive up to 4 paths, greedy beyond). Rows of `block` must correspond
// to consecutive samples. Returns paired (mu, nu), mu in [0, 1),
// nu in [-0.5, 0.5).
// Throws std::invalid_argument when the block is too small for path_count.
std::pair<Eigen::VectorXd, Eigen::VectorXd> esprit_2d(const Eigen::MatrixXcd& block,
                                                      int path_count);

struct AmplitudeFit {
  Eigen::VectorXcd alpha;
  bool rank_deficient = false;
};

// Least-squares amplitudes of the full-data model
// (A*(nu) (column-wise Kronecker) B_n(mu)) alpha ~= rbar, rbar = vec(R).
AmplitudeFit ls_amplitudes(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                           const Eigen::VectorXcd& rbar, int n, const WaveformConfig& cfg,
                           const SensingPlan& plan);

// Squared residual norm of the fit above.
double objective(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                 const Eigen::VectorXcd& alpha, const Eigen::VectorXcd& rbar, int n,
                 const WaveformConfig& cfg, const SensingPlan& plan);

struct ObjectiveGradient {
  Eigen::VectorXd d_mu;
  Eigen::VectorXd d_nu;
  bool near_breakpoint = false;  // a mu sits within tolerance of a window-set change
};

// Analytic gradient of the objective with the blank-window index sets treated
// as locally constant in mu.
ObjectiveGradient objective_gradient(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                                     const Eigen::VectorXcd& alpha, const Eigen::VectorXcd& rbar,
                                     int n, const WaveformConfig& cfg, const SensingPlan& plan,
                                     double breakpoint_tol = 1e-9);

// Barzilai-Borwein step from the parameter delta s and gradient delta y,
// clamped to [gamma_min, gamma_max]; falls back to gamma_min when s.y <= 0.
double bb_step(const Eigen::VectorXd& s, const Eigen::VectorXd& y, double gamma_min,
               double gamma_max);

struct PairEstimationOptions {
  int h_max = 30;              // gradient-descent iterations
  double gamma_min = 1e-8;     // BB clamp (normalized parameter units)
  double gamma_max = 1e-2;
  int order_cap = -1;          // -1: min(|initial block|, M) - 1
  bool reduced_block = true;   // false reproduces the broken full-axis ESPRIT
  int forced_order = -1;       // -1: estimate the order from the data
};

// Full per-pair pipeline: order estimation, reduced-length ESPRIT, amplitude
// LS, then BB-GDA refinement. Returns the best-objective iterate.
PairEstimate estimate_pair(const Eigen::MatrixXcd& measurement, int n, int j,
                           const WaveformConfig& cfg, const SensingPlan& plan,
                           const PairEstimationOptions& options = {});

// All pairs of a cube.
std::vector<PairEstimate> estimate_all_pairs(const MeasurementCube& cube,
                                             const PairEstimationOptions& options = {});

// CSV rows (n, j, path, mu, nu, alpha_re, alpha_im).
std::string pair_estimates_csv(const std::vector<PairEstimate>& estimates);

}  // namespace isac
