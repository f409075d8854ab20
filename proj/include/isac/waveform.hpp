// waveform.hpp - OCDM chirp subcarriers, discrete Fresnel transform, and
// sensing-subcarrier selection
//
// The chirp set comes in three flavours:
//   plain    - root linear chirps psi_k(t), bandwidth up to 2B when shifted
//   folded   - spectrum-folded chirps confined to [-B/2, B/2]
//   permuted - folded chirps with indices rotated by K/2, which is the form
//              actually transmitted; the instantaneous frequency of subcarrier
//              k wraps exactly once per symbol, at t = k T / K
//
// The phase integral of the folded/permuted chirps is evaluated in closed
// form by splitting at the single wrap point (the frequency law is piecewise
// linear), so chirp_eval is exact up to rounding.
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "isac/types.hpp"

namespace isac {

struct WaveformConfig {
  double f_c = 30e9;        // carrier frequency [Hz]
  int K = 256;              // number of OCDM subcarriers
  double B = 100e6;         // bandwidth [Hz]
  double T_GI = 0.16e-6;    // guard interval [s]
  double T_com = 10.9e-6;   // communication-stage duration between sensing symbols [s]
  double f_LPF = 12.5e6;    // low-pass cutoff [Hz]
  double f_ADC = 12.5e6;    // ADC sampling rate [Hz]
  int M = 64;               // number of sensing symbols
  double P_Tx = 100.0;      // sensing transmit power [W] (50 dBm)
  double P_Tx_com = 100.0;  // communication transmit power [W]

  double T() const { return static_cast<double>(K) / B; }
  double lambda() const { return kSpeedOfLight / f_c; }

  // Number of ADC samples per sensing symbol. The small nudge absorbs
  // representation error when f_ADC * (T - T_GI) is an exact integer.
  int Q() const { return static_cast<int>(std::floor(f_ADC * (T() - T_GI) + 1e-9)); }

  // Upper end of the normalized-delay axis: mu = B*tau/(f_ADC*T), tau < T_GI.
  double mu_max() const { return B * T_GI / (f_ADC * T()); }

  // Spacing between consecutive sensing symbols.
  double symbol_period() const { return T() + T_GI + T_com; }

  double to_mu(double tau) const { return B * tau / (f_ADC * T()); }
  double to_tau(double mu) const { return mu * f_ADC * T() / B; }
  double to_nu(double range_rate) const { return range_rate * symbol_period() / lambda(); }

  // Throws std::invalid_argument listing all violated invariants.
  void validate() const;
};

enum class ChirpVariant { plain, folded, permuted };

// Instantaneous frequency of a folded or permuted chirp at time t in [0, T).
// Result lies in [-B/2, B/2).
double instantaneous_frequency(int k, double t, const WaveformConfig& cfg,
                               ChirpVariant variant);

// Evaluate subcarrier k at time t. Zero outside [0, T); unit modulus inside.
Complex chirp_eval(int k, double t, const WaveformConfig& cfg, ChirpVariant variant);

// G x G unitary discrete Fresnel transform matrix,
// [Phi]_{i,j} = e^{-j pi/4} e^{j pi (i-j)^2 / G} / sqrt(G). Requires even G.
Eigen::MatrixXcd dfnt_matrix(int order);

// One-to-one pairing of sensing subcarriers and transmit antennas.
struct SensingPlan {
  std::vector<int> subcarriers;   // k_n, each in [0, K)
  std::vector<int> tx_antennas;   // 0-based transmit antenna index per subcarrier
  int count() const { return static_cast<int>(subcarriers.size()); }
};

// Subcarrier spacing bounds (in index units) implied by the low-pass design:
// spacing must lie in [first, second] for every pair of sensing subcarriers.
std::pair<int, int> subcarrier_spacing_bounds(const WaveformConfig& cfg);

// Candidate subcarrier grid: multiples of the minimum admissible spacing that
// remain pairwise admissible. Any subset of the grid satisfies the spacing
// bounds.
std::vector<int> subcarrier_candidate_grid(const WaveformConfig& cfg);

// Select n sensing subcarriers satisfying the spacing bounds, by rejection
// sampling over the candidate grid (deterministic per seed) with a greedy
// fallback. If n_tx > 0, the paired transmit antennas are spread evenly over
// the aperture; otherwise they default to 0..n-1.
// Throws std::runtime_error when no admissible selection exists.
SensingPlan select_subcarriers(const WaveformConfig& cfg, int n, uint64_t seed,
                               int n_tx = 0);

// First violation of the low-pass separability criterion, if any.
// condition 1: the wanted beat tone must stay inside the LPF passband;
// condition 2: cross-pair beat tones must fall outside it;
// condition 3: their +-B spectral images must fall outside it as well.
// Conditions 2 and 3 quantify over ordered pairs n != n_prime; condition 1
// is reported with n == n_prime.
struct CriterionViolation {
  int condition = 0;  // 1, 2 or 3
  int n = 0;          // plan index
  int n_prime = 0;    // plan index
  double tau = 0.0;   // delay at which the violation occurs [s]
};

std::optional<CriterionViolation> validate_criterion(const SensingPlan& plan,
                                                     const WaveformConfig& cfg,
                                                     int tau_grid_points = 4096);

}  // namespace isac
