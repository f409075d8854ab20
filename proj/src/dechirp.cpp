#include "isac/dechirp.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "isac/rng.hpp"

namespace isac {

namespace {

int plan_subcarrier(const SensingPlan& plan, int n) {
  if (n < 0 || n >= plan.count()) throw std::invalid_argument("plan index out of range");
  return plan.subcarriers[n];
}

void require_tau(double tau, const WaveformConfig& cfg) {
  if (!(tau >= 0.0) || tau >= cfg.T_GI)
    throw std::invalid_argument("delay outside [0, T_GI)");
}

}  // namespace

IfRegions if_regions(int n, int n_prime, double tau, const WaveformConfig& cfg,
                     const SensingPlan& plan) {
  require_tau(tau, cfg);
  const double k_ref = plan_subcarrier(plan, n) / cfg.B;
  const double k_del = plan_subcarrier(plan, n_prime) / cfg.B + tau;
  const double bws = std::max(tau, std::min(k_ref, k_del));
  const double bwe = std::min(cfg.T(), std::max(k_ref, k_del));
  IfRegions out;
  out.bws = bws;
  out.bwe = bwe;
  out.regions = {IfRegion{IfRegionType::I, tau, bws}, IfRegion{IfRegionType::II, bws, bwe},
                 IfRegion{IfRegionType::III, bwe, cfg.T()}};
  return out;
}

Complex if_closed_form(int n, int n_prime, double tau, double t, const WaveformConfig& cfg,
                       const SensingPlan& plan) {
  require_tau(tau, cfg);
  if (!(t >= tau) || t >= cfg.T()) throw std::invalid_argument("time outside [tau, T)");
  const int k_n = plan_subcarrier(plan, n);
  const int k_np = plan_subcarrier(plan, n_prime);
  const double B = cfg.B;
  const double T = cfg.T();
  const int K = cfg.K;

  const auto centered_sq = [K](int k) {
    int m = (k - K / 2) % K;
    if (m < 0) m += K;
    return static_cast<double>(m) * m;
  };
  const double phi_pair = kPi / K * (centered_sq(k_n) - centered_sq(k_np));
  // Constant of the leading region. The delayed subcarrier's index enters
  // here: the phase accumulated before its fold depends on where that fold
  // sits, not on the reference subcarrier.
  const double phi_lead = -B * kPi / T * tau * tau - (kTwoPi * k_np / T - B * kPi) * tau;
  const double base_freq = B * tau / T + static_cast<double>(k_np - k_n) / T;

  const IfRegions regions = if_regions(n, n_prime, tau, cfg, plan);
  double phase;
  if (t < regions.bws) {
    phase = phi_lead + kTwoPi * base_freq * t;
  } else if (t < regions.bwe) {
    const double delta = (static_cast<double>(k_n - k_np) < B * tau) ? -1.0 : 1.0;
    const double phi_mid = phi_lead - kPi * (1.0 + delta) * B * tau;
    phase = phi_mid + kTwoPi * (base_freq + B * delta) * t;
  } else {
    phase = phi_lead - kTwoPi * B * tau + kTwoPi * base_freq * t;
  }
  return std::polar(1.0, phi_pair + phase);
}

Complex if_direct(int n, int n_prime, double tau, double t, const WaveformConfig& cfg,
                  const SensingPlan& plan) {
  require_tau(tau, cfg);
  if (!(t >= tau) || t >= cfg.T()) throw std::invalid_argument("time outside [tau, T)");
  const Complex delayed =
      chirp_eval(plan_subcarrier(plan, n_prime), t - tau, cfg, ChirpVariant::permuted);
  const Complex reference = chirp_eval(plan_subcarrier(plan, n), t, cfg, ChirpVariant::permuted);
  return delayed * std::conj(reference);
}

ResponseSets response_sets(int k, double tau, const WaveformConfig& cfg) {
  require_tau(tau, cfg);
  const double k_time = static_cast<double>(k) / cfg.B;
  const double bws = std::max(tau, std::min(k_time, k_time + tau));
  const double bwe = std::min(cfg.T(), std::max(k_time, k_time + tau));
  ResponseSets sets;
  const int q_count = cfg.Q();
  for (int q = 1; q <= q_count; ++q) {
    const double t = cfg.T_GI + static_cast<double>(q - 1) / cfg.f_ADC;
    if (t < bws)
      sets.region1.push_back(q);
    else if (t < bwe)
      sets.region2.push_back(q);
    else
      sets.region3.push_back(q);
  }
  return sets;
}

Eigen::VectorXcd response_vector_with_sets(const ResponseSets& sets, double mu,
                                           const WaveformConfig& cfg) {
  Eigen::VectorXcd b = Eigen::VectorXcd::Zero(cfg.Q());
  const double phi = kTwoPi * cfg.f_ADC * cfg.T();
  for (int q : sets.region1) b(q - 1) = std::polar(1.0, kTwoPi * mu * (q - 1));
  for (int q : sets.region3) b(q - 1) = std::polar(1.0, kTwoPi * mu * (q - 1) - mu * phi);
  return b;
}

Eigen::VectorXcd response_vector(int n, double mu, const WaveformConfig& cfg,
                                 const SensingPlan& plan) {
  if (!(mu >= 0.0) || mu >= cfg.mu_max())
    throw std::invalid_argument("normalized delay outside [0, B*T_GI/(f_ADC*T))");
  const ResponseSets sets = response_sets(plan_subcarrier(plan, n), cfg.to_tau(mu), cfg);
  return response_vector_with_sets(sets, mu, cfg);
}

std::vector<double> response_breakpoints(int n, const WaveformConfig& cfg,
                                         const SensingPlan& plan) {
  const double k_time = static_cast<double>(plan_subcarrier(plan, n)) / cfg.B;
  std::vector<double> breaks;
  for (int q = 1; q <= cfg.Q(); ++q) {
    const double t = cfg.T_GI + static_cast<double>(q - 1) / cfg.f_ADC;
    // Sample q leaves the blank window when k/B + tau crosses its time.
    const double tau = t - k_time;
    if (tau > 0.0 && tau < cfg.T_GI) breaks.push_back(cfg.to_mu(tau));
  }
  return breaks;
}

PairPathTable true_pair_parameters(const Scene& scene, const GainTensor& gains,
                                   const SensingPlan& plan, const ArrayGeometry& geometry,
                                   const WaveformConfig& cfg) {
  const int n_sensing = plan.count();
  const int n_rx = geometry.n_rx();
  const int targets = scene.target_count();
  if (static_cast<int>(gains.size()) != n_sensing)
    throw std::invalid_argument("gain tensor does not match the plan");

  PairPathTable table(n_sensing);
  const double power = cfg.P_Tx / n_sensing;
  for (int n = 0; n < n_sensing; ++n) {
    const Vec3& tx = geometry.tx_positions.at(plan.tx_antennas[n]);
    const int k_n = plan.subcarriers[n];
    table[n].resize(n_rx);
    for (int j = 0; j < n_rx; ++j) {
      table[n][j].reserve(targets);
      for (int l = 0; l < targets; ++l) {
        const Target& target = scene.targets[l];
        const double tau = bistatic_delay(target.position, tx, geometry.rx_positions[j]);
        if (tau >= cfg.T_GI) throw std::invalid_argument("bistatic delay reaches the guard interval");
        const double rate =
            bistatic_range_rate(target.position, target.velocity, tx, geometry.rx_positions[j]);
        PathParams p;
        p.mu = cfg.to_mu(tau);
        p.nu = cfg.to_nu(rate);
        // Accumulated static phase: carrier delay, guard-interval advance of
        // the beat tone and Doppler, and the leading-region constant.
        const double phi_lead =
            -cfg.B * kPi / cfg.T() * tau * tau - (kTwoPi * k_n / cfg.T() - cfg.B * kPi) * tau;
        const double phase = -kTwoPi * cfg.f_c * tau +
                             kTwoPi * (cfg.B * tau / cfg.T() - rate / cfg.lambda()) * cfg.T_GI +
                             phi_lead;
        p.amplitude = power * gains[n](j, l) * std::polar(1.0, phase);
        table[n][j].push_back(p);
      }
    }
  }
  return table;
}

MeasurementCube synthesize_measurements(const Scene& scene, const GainTensor& gains,
                                        const SensingPlan& plan, const ArrayGeometry& geometry,
                                        const WaveformConfig& cfg, double sigma2,
                                        uint64_t seed) {
  const PairPathTable table = true_pair_parameters(scene, gains, plan, geometry, cfg);
  const int n_sensing = plan.count();
  const int n_rx = geometry.n_rx();
  const int Q = cfg.Q();
  const int M = cfg.M;

  MeasurementCube cube;
  cube.cfg = cfg;
  cube.plan = plan;
  cube.n_rx = n_rx;
  cube.sigma2 = sigma2;
  cube.data.assign(static_cast<size_t>(n_sensing) * n_rx, Eigen::MatrixXcd::Zero(Q, M));

  for (int n = 0; n < n_sensing; ++n) {
    for (int j = 0; j < n_rx; ++j) {
      Eigen::MatrixXcd& r = cube.at(n, j);
      for (const PathParams& path : table[n][j]) {
        const Eigen::VectorXcd b = response_vector(n, path.mu, cfg, plan);
        Eigen::VectorXcd a(M);
        for (int m = 0; m < M; ++m) a(m) = std::polar(1.0, kTwoPi * path.nu * m);
        r.noalias() += path.amplitude * b * a.adjoint();
      }
      if (sigma2 > 0.0) {
        Rng rng = Rng::derive(seed, {0x6e6f6973ULL, static_cast<uint64_t>(n),
                                     static_cast<uint64_t>(j)});
        for (int m = 0; m < M; ++m)
          for (int q = 0; q < Q; ++q) r(q, m) += rng.cgaussian(sigma2);
      }
    }
  }
  return cube;
}

namespace {

// Ideal low-pass of the compactly supported mixer output: spectral masking on
// a zero-padded window (pad factor 4), evaluated as an explicit projection so
// the grid length need not be a power of two. Padding avoids the circular
// wrap-around ringing a plain per-symbol DFT mask would add; the remaining
// in-band content at the ADC instants is the genuine transition response of
// a brick-wall filter.
struct BandProjection {
  Eigen::MatrixXcd analysis;   // bins x dense
  Eigen::MatrixXcd synthesis;  // adc x bins
};

constexpr int kLpfPadFactor = 4;

BandProjection make_band_projection(const WaveformConfig& cfg, long dense_count) {
  const double window = kLpfPadFactor * cfg.T();
  const long padded = kLpfPadFactor * dense_count;
  const int max_bin = static_cast<int>(std::floor(cfg.f_LPF * window + 1e-9));
  const int bins = 2 * max_bin + 1;
  BandProjection p;
  p.analysis.resize(bins, dense_count);
  for (int b = 0; b < bins; ++b) {
    const long freq_index = b - max_bin;
    for (long s = 0; s < dense_count; ++s)
      p.analysis(b, s) = std::polar(1.0 / static_cast<double>(padded),
                                    -kTwoPi * freq_index * s / static_cast<double>(padded));
  }
  p.synthesis.resize(cfg.Q(), bins);
  for (int q = 0; q < cfg.Q(); ++q) {
    const double t = cfg.T_GI + static_cast<double>(q) / cfg.f_ADC;
    for (int b = 0; b < bins; ++b) {
      const long freq_index = b - max_bin;
      p.synthesis(q, b) = std::polar(1.0, kTwoPi * freq_index * t / window);
    }
  }
  return p;
}

}  // namespace

MeasurementCube dechirp_oracle(const Scene& scene, const GainTensor& gains,
                               const SensingPlan& plan, const ArrayGeometry& geometry,
                               const WaveformConfig& cfg, const OracleOptions& options) {
  if (options.oversample < 4) throw std::invalid_argument("oversample factor must be at least 4");
  const long dense_count = static_cast<long>(cfg.K) * options.oversample;
  if (dense_count > options.max_dense_samples)
    throw std::invalid_argument("dense grid exceeds the sample budget");

  const int n_sensing = plan.count();
  const int n_rx = geometry.n_rx();
  const int Q = cfg.Q();
  const int M = cfg.M;
  const int targets = scene.target_count();
  const double dt = 1.0 / (cfg.B * options.oversample);
  const double power = cfg.P_Tx / n_sensing;

  std::vector<int> active_tx;
  if (options.include_tx.empty()) {
    for (int n = 0; n < n_sensing; ++n) active_tx.push_back(n);
  } else {
    active_tx = options.include_tx;
  }

  MeasurementCube cube;
  cube.cfg = cfg;
  cube.plan = plan;
  cube.n_rx = n_rx;
  cube.sigma2 = 0.0;
  cube.data.assign(static_cast<size_t>(n_sensing) * n_rx, Eigen::MatrixXcd::Zero(Q, M));

  const BandProjection projection = make_band_projection(cfg, dense_count);

  // Reference conjugate chirps, one per sensing subcarrier.
  std::vector<Eigen::VectorXcd> reference(n_sensing);
  for (int n = 0; n < n_sensing; ++n) {
    reference[n].resize(dense_count);
    for (long s = 0; s < dense_count; ++s)
      reference[n](s) =
          std::conj(chirp_eval(plan.subcarriers[n], s * dt, cfg, ChirpVariant::permuted));
  }

  Eigen::VectorXcd echo(dense_count), mixed(dense_count), chirp_shifted(dense_count);
  for (int m = 0; m < M; ++m) {
    const double symbol_start = m * cfg.symbol_period() + cfg.T_GI;
    for (int j = 0; j < n_rx; ++j) {
      echo.setZero();
      for (int np : active_tx) {
        const Vec3& tx = geometry.tx_positions.at(plan.tx_antennas[np]);
        const int k = plan.subcarriers[np];
        for (int l = 0; l < targets; ++l) {
          const Target& target = scene.targets[l];
          const Complex gain = power * gains[np](j, l);
          if (gain == Complex(0.0, 0.0)) continue;
          if (options.exact_motion) {
            // Per-sample delay from the instantaneous target position.
            for (long s = 0; s < dense_count; ++s) {
              const double t_abs = symbol_start + s * dt;
              const Vec3 pos = target.position + target.velocity * t_abs;
              const double tau = bistatic_delay(pos, tx, geometry.rx_positions[j]);
              echo(s) += gain * std::polar(1.0, -kTwoPi * cfg.f_c * tau) *
                         chirp_eval(k, s * dt - tau, cfg, ChirpVariant::permuted);
            }
          } else {
            // Positions frozen at t = 0; Doppler enters as a per-symbol phase.
            const double tau = bistatic_delay(target.position, tx, geometry.rx_positions[j]);
            const double rate = bistatic_range_rate(target.position, target.velocity, tx,
                                                    geometry.rx_positions[j]);
            const double nu = cfg.to_nu(rate);
            const Complex path_gain = gain *
                                      std::polar(1.0, -kTwoPi * cfg.f_c * tau) *
                                      std::polar(1.0, -kTwoPi * nu * m) *
                                      std::polar(1.0, -kTwoPi * rate / cfg.lambda() * cfg.T_GI);
            for (long s = 0; s < dense_count; ++s)
              chirp_shifted(s) = chirp_eval(k, s * dt - tau, cfg, ChirpVariant::permuted);
            echo += path_gain * chirp_shifted;
          }
        }
      }
      for (int n = 0; n < n_sensing; ++n) {
        mixed = echo.cwiseProduct(reference[n]);
        const Eigen::VectorXcd kept = projection.analysis * mixed;
        cube.at(n, j).col(m) = projection.synthesis * kept;
      }
    }
  }
  return cube;
}

namespace {

constexpr uint64_t kDumpMagic = 0x4953414343554245ULL;  // "ISACCUBE"

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_measurement_dump(const MeasurementCube& cube, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open dump file for writing: " + path);
  write_pod(out, kDumpMagic);
  const int n = cube.plan.count();
  const int Q = cube.cfg.Q();
  write_pod<int32_t>(out, n);
  write_pod<int32_t>(out, cube.n_rx);
  write_pod<int32_t>(out, Q);
  write_pod<int32_t>(out, cube.cfg.M);
  write_pod<double>(out, cube.sigma2);
  write_pod<double>(out, cube.cfg.f_c);
  write_pod<int32_t>(out, cube.cfg.K);
  write_pod<double>(out, cube.cfg.B);
  write_pod<double>(out, cube.cfg.T_GI);
  write_pod<double>(out, cube.cfg.T_com);
  write_pod<double>(out, cube.cfg.f_LPF);
  write_pod<double>(out, cube.cfg.f_ADC);
  write_pod<double>(out, cube.cfg.P_Tx);
  write_pod<double>(out, cube.cfg.P_Tx_com);
  for (int i = 0; i < n; ++i) write_pod<int32_t>(out, cube.plan.subcarriers[i]);
  for (int i = 0; i < n; ++i) write_pod<int32_t>(out, cube.plan.tx_antennas[i]);
  for (const Eigen::MatrixXcd& r : cube.data) {
    for (int m = 0; m < r.cols(); ++m) {
      for (int q = 0; q < r.rows(); ++q) {
        write_pod<double>(out, r(q, m).real());
        write_pod<double>(out, r(q, m).imag());
      }
    }
  }
}

MeasurementCube read_measurement_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dump file: " + path);
  if (read_pod<uint64_t>(in) != kDumpMagic) throw std::runtime_error("bad dump header: " + path);
  MeasurementCube cube;
  const int n = read_pod<int32_t>(in);
  cube.n_rx = read_pod<int32_t>(in);
  const int Q = read_pod<int32_t>(in);
  const int M = read_pod<int32_t>(in);
  cube.sigma2 = read_pod<double>(in);
  cube.cfg.f_c = read_pod<double>(in);
  cube.cfg.K = read_pod<int32_t>(in);
  cube.cfg.B = read_pod<double>(in);
  cube.cfg.T_GI = read_pod<double>(in);
  cube.cfg.T_com = read_pod<double>(in);
  cube.cfg.f_LPF = read_pod<double>(in);
  cube.cfg.f_ADC = read_pod<double>(in);
  cube.cfg.P_Tx = read_pod<double>(in);
  cube.cfg.P_Tx_com = read_pod<double>(in);
  cube.cfg.M = M;
  cube.plan.subcarriers.resize(n);
  cube.plan.tx_antennas.resize(n);
  for (int i = 0; i < n; ++i) cube.plan.subcarriers[i] = read_pod<int32_t>(in);
  for (int i = 0; i < n; ++i) cube.plan.tx_antennas[i] = read_pod<int32_t>(in);
  if (cube.cfg.Q() != Q) throw std::runtime_error("dump header inconsistent with config");
  cube.data.assign(static_cast<size_t>(n) * cube.n_rx, Eigen::MatrixXcd::Zero(Q, M));
  for (Eigen::MatrixXcd& r : cube.data) {
    for (int m = 0; m < M; ++m) {
      for (int q = 0; q < Q; ++q) {
        const double re = read_pod<double>(in);
        const double im = read_pod<double>(in);
        r(q, m) = Complex(re, im);
      }
    }
  }
  if (!in) throw std::runtime_error("truncated dump: " + path);
  return cube;
}

}  // namespace isac
