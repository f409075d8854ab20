// channel_estimation.hpp - compressive downlink channel estimation with
// shortened-chirp pilots, and its refinement from sensing results
//
// Pilot symbols are shortened (length G) Fresnel-precoded blocks with a
// cyclic prefix, so circular convolution with the channel taps followed by a
// DFT decouples the G frequency bins. Each bin's channel vector is sparse in
// a polar-domain dictionary of near-field steering atoms (jointly sampled in
// angle and distance); a distributed orthogonal matching pursuit recovers a
// support shared across bins. Positions delivered by the sensing pipeline
// replace sufficiently correlated selected atoms with exact steering vectors,
// after which an overdetermined least-squares re-fit yields the enhanced
// estimate.
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "isac/rng.hpp"
#include "isac/scene.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

struct PilotBlock {
  int n_ce = 0;   // pilot symbol count
  int g = 0;      // shortened symbol length
  int n_tx = 0;
  std::vector<Eigen::MatrixXcd> constellation;  // X_p, G x N_Tx, unit-power QPSK
  std::vector<Eigen::MatrixXcd> modulated;      // S_p = Phi^H X_p
};

PilotBlock generate_pilots(int n_ce, int g, int n_tx, uint64_t seed);

// Received samples of every pilot symbol: circular convolution of the
// modulated rows with the tap vectors, plus noise.
std::vector<Eigen::VectorXcd> simulate_pilot_rx(const PilotBlock& pilots,
                                                const std::vector<Eigen::VectorXcd>& taps,
                                                double p_tx, double sigma2, Rng& rng);

struct FdObservations {
  std::vector<Eigen::VectorXcd> y;  // per bin g: length N_CE
  std::vector<Eigen::MatrixXcd> d;  // per bin g: N_CE x N_Tx pilot matrix
  double p_tx = 1.0;
};

// DFT the received pilots and regroup per frequency bin; the pilot matrices
// D_g are the unnormalized bin projections of the modulated rows.
FdObservations assemble_fd(const PilotBlock& pilots,
                           const std::vector<Eigen::VectorXcd>& received, double p_tx);

struct PolarDictionary {
  Eigen::MatrixXcd atoms;        // N_Tx x N_Pd, unit-norm columns
  std::vector<double> distance;  // per atom [m]; infinity marks far-field rings
  std::vector<double> angle;     // per atom: sine-space parameter in [-1, 1)
  int atom_count() const { return static_cast<int>(atoms.cols()); }
};

// Near-field steering dictionary on a joint (angle, distance) grid: angles
// uniform in sine space with angle_oversample * N_Tx points; distances on
// reciprocal-distance rings from d_max down to d_min, spaced so adjacent
// rings correlate below ring_coherence at broadside, plus one far-field ring.
PolarDictionary build_polar_dictionary(const std::vector<Vec3>& tx_positions, double f_c,
                                       double d_min, double d_max, int angle_oversample,
                                       double ring_coherence = 0.95);

struct CeResult {
  std::vector<Eigen::VectorXcd> initial;   // per bin: N_Tx channel estimate
  std::vector<Eigen::VectorXcd> enhanced;  // filled by refine_ls
  std::vector<int> support;                // selected dictionary columns
  Eigen::MatrixXcd selected_atoms;         // N_Tx x |support|, mutable by enhancement
  std::vector<int> skipped_iterations;     // singular LS solves, if any
};

// Per-bin sensing matrices sqrt(P) D_g W; they depend only on the pilots and
// the dictionary, so callers running many trials precompute them once.
std::vector<Eigen::MatrixXcd> domp_sensing_matrices(const FdObservations& obs,
                                                    const PolarDictionary& dictionary);

// Distributed orthogonal matching pursuit with the correlation summed across
// bins; fixed iteration count with an early stop on a residual floor.
CeResult domp(const FdObservations& obs, const PolarDictionary& dictionary, int iterations,
              double residual_floor = 1e-10,
              const std::vector<Eigen::MatrixXcd>* precomputed_sensing = nullptr);

// Replace selected atoms that correlate (in magnitude) at or above the
// threshold with the steering vector of each sensed position.
void sensing_enhance(CeResult& result, const std::vector<Vec3>& sensed_positions,
                     double threshold, const std::vector<Vec3>& tx_positions, double f_c);

// Overdetermined least-squares re-fit on the (possibly enhanced) selected
// atoms; fills result.enhanced.
// Throws std::invalid_argument when the support exceeds the pilot count.
void refine_ls(CeResult& result, const FdObservations& obs);

enum class BerWaveform { ocdm, ofdm };

struct BerConfig {
  int subcarriers = 256;   // data subcarriers per symbol
  double p_tx = 100.0;     // transmit power [W]
};

// Downlink bit error rate over a frequency-selective channel with
// per-subcarrier conjugate beamforming from the CSI taps (true taps =
// perfect CSI), per-subcarrier MMSE equalization, and hard 16-QAM demapping.
// n_bits must be a multiple of 4 * subcarriers.
double ber_pipeline(const std::vector<Eigen::VectorXcd>& true_taps,
                    const std::vector<Eigen::VectorXcd>& csi_taps, BerWaveform waveform,
                    double snr_db, long n_bits, const BerConfig& ber_cfg, uint64_t seed);

// Per-bin frequency response at `bins` subcarriers from G channel taps
// (zero-padded DFT, unnormalized).
std::vector<Eigen::VectorXcd> taps_to_subcarriers(const std::vector<Eigen::VectorXcd>& taps,
                                                  int bins);

// Invert comm_channel_fd: taps from the normalized per-bin vectors.
std::vector<Eigen::VectorXcd> fd_to_taps(const std::vector<Eigen::VectorXcd>& fd);

}  // namespace isac
