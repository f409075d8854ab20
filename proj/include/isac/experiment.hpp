// experiment.hpp - configuration, seeded experiment suites, CSV emission
//
// One master seed drives everything: each (suite, grid point, trial) derives
// its own generator, and per-trial results land in preallocated slots reduced
// in trial order, so output bytes do not depend on the thread count.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "isac/channel_estimation.hpp"
#include "isac/fusion.hpp"
#include "isac/metrics.hpp"
#include "isac/scene.hpp"
#include "isac/types.hpp"
#include "isac/waveform.hpp"

namespace isac {

struct ExperimentConfig {
  WaveformConfig waveform;

  // Geometry
  int n_tx = 512;
  int n_rx = 4;
  double d_rx = 1.0;

  // Sensing
  int n_sensing = 4;  // number of sensing subcarriers/antennas
  int targets = 3;
  int h_max = 30;        // per-pair refinement iterations
  int h_prime_max = 10;  // positioning refinement iterations
  GainModel channel;
  SceneDistribution scene_dist;
  std::vector<Target> explicit_targets;  // overrides random draws when nonempty

  // Communication
  int cp_length = 32;  // G
  int n_ce = 64;
  double epsilon = 0.6;
  int l_com = 3;    // communication scatterers
  int l_comm = 3;   // scatterers shared with the sensing scene
  double dict_d_min = 3.0;
  double dict_d_max = 20.0;
  int angle_oversample = 2;
  Vec3 ut_position = Vec3(1.0, 1.5, 5.0);
  bool sensing_for_ce = true;  // false: enhancement uses true target positions

  // Experiment control
  std::vector<double> snr_db = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0};
  std::vector<int> n_ce_grid;  // comm_nmse sweep; empty = {n_ce}
  int trials = 100;
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  bool noiseless = false;
  long ber_bits = 1 << 20;

  double sigma2_for(double snr_db_value) const {
    return noiseless ? 0.0 : waveform.P_Tx / linear_from_db(snr_db_value);
  }
  double comm_sigma2_for(double snr_db_value) const {
    return noiseless ? 0.0 : waveform.P_Tx_com / linear_from_db(snr_db_value);
  }
};

// Parse a JSON config file; missing fields fall back to the defaults above.
// Throws std::runtime_error with the offending field on parse or invariant
// errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

// Shrink to desk scale: 128 Tx antennas, shorter pilots, 100 trials.
void apply_desk_preset(ExperimentConfig& cfg);

// FNV-1a over the canonical serialized form.
std::string config_hash(const ExperimentConfig& cfg);
std::string config_to_json(const ExperimentConfig& cfg);

enum class Suite { sensing_tmse, vibs_mse, comm_nmse, ber };

Suite suite_from_name(const std::string& name);
std::string suite_name(Suite suite);

// Run one suite, writing <suite>.csv into out_dir. Returns the paths written.
// A short header (derived quantities, hash) goes to stdout unless quiet.
std::vector<std::string> run_experiment(const ExperimentConfig& cfg, Suite suite,
                                        const std::string& out_dir, bool quiet = false);

// Self-contained matplotlib script reproducing the metric curves from the
// given CSVs; generation is deterministic in the path list.
std::string emit_plot_script(const std::vector<std::string>& csv_paths);

// Deterministic parallel map: fn(i) for i in [0, count), result slots indexed
// by i; thread count <= 1 runs serially.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

// Validation summary used by the CLI (derived Q, spacing bounds, grid, ...).
std::string describe_config(const ExperimentConfig& cfg);

}  // namespace isac
