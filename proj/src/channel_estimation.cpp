#include "isac/channel_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace isac {

PilotBlock generate_pilots(int n_ce, int g, int n_tx, uint64_t seed) {
  if (g % 2 != 0) throw std::invalid_argument("pilot symbol length must be even");
  if (n_ce < 1 || n_tx < 1) throw std::invalid_argument("pilot counts must be positive");
  PilotBlock block;
  block.n_ce = n_ce;
  block.g = g;
  block.n_tx = n_tx;
  const Eigen::MatrixXcd phi_h = dfnt_matrix(g).adjoint();
  Rng rng = Rng::derive(seed, {0x70696c6fULL});
  const double amp = 1.0 / std::sqrt(2.0);
  for (int p = 0; p < n_ce; ++p) {
    Eigen::MatrixXcd x(g, n_tx);
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < n_tx; ++c) {
        const uint64_t bits = rng.next_u64();
        x(r, c) = Complex((bits & 1) ? amp : -amp, (bits & 2) ? amp : -amp);
      }
    block.constellation.push_back(x);
    block.modulated.push_back(phi_h * x);
  }
  return block;
}

std::vector<Eigen::VectorXcd> simulate_pilot_rx(const PilotBlock& pilots,
                                                const std::vector<Eigen::VectorXcd>& taps,
                                                double p_tx, double sigma2, Rng& rng) {
  const int g_len = pilots.g;
  if (static_cast<int>(taps.size()) != g_len)
    throw std::invalid_argument("tap count must equal the pilot symbol length");
  const double amp = std::sqrt(p_tx);
  std::vector<Eigen::VectorXcd> received;
  received.reserve(pilots.n_ce);
  for (int p = 0; p < pilots.n_ce; ++p) {
    const Eigen::MatrixXcd& s = pilots.modulated[p];
    Eigen::VectorXcd y(g_len);
    for (int g = 0; g < g_len; ++g) {
      Complex acc(0.0, 0.0);
      for (int gp = 0; gp < g_len; ++gp) {
        const int shifted = (g - gp + g_len) % g_len;
        acc += s.row(shifted).transpose().cwiseProduct(taps[gp]).sum();
      }
      y(g) = amp * acc;
      if (sigma2 > 0.0) y(g) += rng.cgaussian(sigma2);
    }
    received.push_back(std::move(y));
  }
  return received;
}

FdObservations assemble_fd(const PilotBlock& pilots,
                           const std::vector<Eigen::VectorXcd>& received, double p_tx) {
  const int g_len = pilots.g;
  const int n_ce = pilots.n_ce;
  if (static_cast<int>(received.size()) != n_ce)
    throw std::invalid_argument("received pilot count mismatch");

  Eigen::MatrixXcd dft(g_len, g_len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(g_len));
  for (int a = 0; a < g_len; ++a)
    for (int b = 0; b < g_len; ++b)
      dft(a, b) = scale * std::polar(1.0, -kTwoPi * a * b / g_len);

  FdObservations obs;
  obs.p_tx = p_tx;
  obs.y.assign(g_len, Eigen::VectorXcd(n_ce));
  obs.d.assign(g_len, Eigen::MatrixXcd(n_ce, pilots.n_tx));
  for (int p = 0; p < n_ce; ++p) {
    const Eigen::VectorXcd y_bar = dft * received[p];
    // Unnormalized bin projection of the modulated rows.
    const Eigen::MatrixXcd d_all = (dft * pilots.modulated[p]) / scale;
    for (int g = 0; g < g_len; ++g) {
      obs.y[g](p) = y_bar(g);
      obs.d[g].row(p) = d_all.row(g);
    }
  }
  return obs;
}

namespace {

Vec3 polar_grid_point(double angle, double distance) {
  return Vec3(distance * angle, 0.0, distance * std::sqrt(1.0 - angle * angle));
}

Eigen::VectorXcd far_field_atom(double angle, const std::vector<Vec3>& tx_positions,
                                double f_c) {
  const int n = static_cast<int>(tx_positions.size());
  Eigen::VectorXcd a(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i)
    a(i) = scale * std::polar(1.0, kTwoPi * f_c * tx_positions[i].x() * angle / kSpeedOfLight);
  return a;
}

}  // namespace

PolarDictionary build_polar_dictionary(const std::vector<Vec3>& tx_positions, double f_c,
                                       double d_min, double d_max, int angle_oversample,
                                       double ring_coherence) {
  const int n_tx = static_cast<int>(tx_positions.size());
  if (n_tx < 1) throw std::invalid_argument("empty transmit array");
  if (!(d_min > 0.0) || !(d_max > d_min)) throw std::invalid_argument("bad distance range");
  double aperture = 0.0;
  for (const Vec3& p : tx_positions) aperture = std::max(aperture, p.norm());
  if (d_min <= aperture / 2.0)
    throw std::invalid_argument("minimum dictionary distance must exceed half the aperture");
  if (angle_oversample < 1) throw std::invalid_argument("angle oversample must be positive");

  const int n_angles = angle_oversample * n_tx;

  // Reciprocal-distance ring spacing: smallest step at which two broadside
  // atoms decorrelate to the target level.
  const auto broadside_coherence = [&](double recip_step) {
    const Eigen::VectorXcd a = near_field_steering(polar_grid_point(0.0, d_max), tx_positions, f_c);
    const double r2 = 1.0 / (1.0 / d_max + recip_step);
    const Eigen::VectorXcd b = near_field_steering(polar_grid_point(0.0, r2), tx_positions, f_c);
    return std::abs(a.dot(b));
  };
  const double recip_span = 1.0 / d_min - 1.0 / d_max;
  double step_hi = recip_span / 1024.0;
  while (broadside_coherence(step_hi) > ring_coherence && step_hi < recip_span) step_hi *= 2.0;
  double step_lo = step_hi / 2.0, step = step_hi;
  if (broadside_coherence(step_hi) <= ring_coherence) {
    for (int iter = 0; iter < 40; ++iter) {
      step = 0.5 * (step_lo + step_hi);
      if (broadside_coherence(step) > ring_coherence)
        step_lo = step;
      else
        step_hi = step;
    }
    step = step_hi;
  }

  std::vector<double> rings;
  rings.push_back(std::numeric_limits<double>::infinity());
  for (double recip = 1.0 / d_max; recip <= 1.0 / d_min + 1e-12; recip += step)
    rings.push_back(1.0 / recip);

  PolarDictionary dict;
  dict.atoms.resize(n_tx, static_cast<long>(n_angles) * rings.size());
  long col = 0;
  for (int s = 0; s < n_angles; ++s) {
    const double angle = -1.0 + (2.0 * s + 1.0) / n_angles;
    for (double r : rings) {
      dict.atoms.col(col) = std::isinf(r)
                                ? far_field_atom(angle, tx_positions, f_c)
                                : near_field_steering(polar_grid_point(angle, r), tx_positions, f_c);
      dict.distance.push_back(r);
      dict.angle.push_back(angle);
      ++col;
    }
  }
  return dict;
}

std::vector<Eigen::MatrixXcd> domp_sensing_matrices(const FdObservations& obs,
                                                    const PolarDictionary& dictionary) {
  const double amp = std::sqrt(obs.p_tx);
  std::vector<Eigen::MatrixXcd> sensing(obs.d.size());
  for (size_t g = 0; g < obs.d.size(); ++g) sensing[g] = amp * obs.d[g] * dictionary.atoms;
  return sensing;
}

CeResult domp(const FdObservations& obs, const PolarDictionary& dictionary, int iterations,
              double residual_floor, const std::vector<Eigen::MatrixXcd>* precomputed_sensing) {
  const int bins = static_cast<int>(obs.y.size());
  if (bins == 0) throw std::invalid_argument("no observations");
  const int n_ce = static_cast<int>(obs.y[0].size());
  if (iterations > n_ce)
    throw std::invalid_argument("more iterations than pilot symbols");
  const int n_atoms = dictionary.atom_count();

  std::vector<Eigen::MatrixXcd> local_sensing;
  if (!precomputed_sensing) local_sensing = domp_sensing_matrices(obs, dictionary);
  const std::vector<Eigen::MatrixXcd>& sensing =
      precomputed_sensing ? *precomputed_sensing : local_sensing;

  std::vector<Eigen::VectorXcd> residual = obs.y;
  double total_energy = 0.0;
  for (int g = 0; g < bins; ++g) total_energy += residual[g].squaredNorm();

  CeResult result;
  std::vector<bool> excluded(n_atoms, false);
  std::vector<Eigen::VectorXcd> coeff(bins);

  for (int iter = 0; iter < iterations; ++iter) {
    double res_energy = 0.0;
    for (int g = 0; g < bins; ++g) res_energy += residual[g].squaredNorm();
    if (total_energy <= 0.0 || res_energy / total_energy < residual_floor) break;

    Eigen::VectorXd score = Eigen::VectorXd::Zero(n_atoms);
    for (int g = 0; g < bins; ++g)
      score += (sensing[g].adjoint() * residual[g]).cwiseAbs();
    for (int i : result.support) excluded[i] = true;
    int pick = -1;
    for (int i = 0; i < n_atoms; ++i)
      if (!excluded[i] && (pick < 0 || score(i) > score(pick))) pick = i;
    if (pick < 0) break;
    result.support.push_back(pick);

    const int cols = static_cast<int>(result.support.size());
    std::vector<Eigen::MatrixXcd> selected(bins);
    for (int g = 0; g < bins; ++g) {
      selected[g].resize(n_ce, cols);
      for (int c = 0; c < cols; ++c) selected[g].col(c) = sensing[g].col(result.support[c]);
    }
    bool singular = false;
    for (int g = 0; g < bins && !singular; ++g) {
      auto cod = selected[g].completeOrthogonalDecomposition();
      cod.setThreshold(1e-10);
      if (cod.rank() < cols) singular = true;
    }
    if (singular) {
      result.support.pop_back();
      excluded[pick] = true;
      result.skipped_iterations.push_back(iter);
      continue;
    }
    for (int g = 0; g < bins; ++g) {
      coeff[g] = selected[g].completeOrthogonalDecomposition().solve(obs.y[g]);
      residual[g] = obs.y[g] - selected[g] * coeff[g];
    }
  }

  const int cols = static_cast<int>(result.support.size());
  result.selected_atoms.resize(dictionary.atoms.rows(), cols);
  for (int c = 0; c < cols; ++c)
    result.selected_atoms.col(c) = dictionary.atoms.col(result.support[c]);
  result.initial.assign(bins, Eigen::VectorXcd::Zero(dictionary.atoms.rows()));
  if (cols > 0)
    for (int g = 0; g < bins; ++g) result.initial[g] = result.selected_atoms * coeff[g];
  return result;
}

void sensing_enhance(CeResult& result, const std::vector<Vec3>& sensed_positions,
                     double threshold, const std::vector<Vec3>& tx_positions, double f_c) {
  if (!(threshold > 0.0) || threshold > 1.0)
    throw std::invalid_argument("correlation threshold must lie in (0, 1]");
  if (result.selected_atoms.cols() == 0) return;
  for (const Vec3& p : sensed_positions) {
    const Eigen::VectorXcd steering = near_field_steering(p, tx_positions, f_c);
    const Eigen::VectorXd corr = (result.selected_atoms.adjoint() * steering).cwiseAbs();
    for (long c = 0; c < corr.size(); ++c)
      if (corr(c) >= threshold) result.selected_atoms.col(c) = steering;
  }
}

void refine_ls(CeResult& result, const FdObservations& obs) {
  const int bins = static_cast<int>(obs.y.size());
  const int cols = static_cast<int>(result.selected_atoms.cols());
  result.enhanced.assign(bins, Eigen::VectorXcd::Zero(result.selected_atoms.rows()));
  if (cols == 0) return;
  const int n_ce = static_cast<int>(obs.y[0].size());
  if (cols > n_ce)
    throw std::invalid_argument("support larger than the pilot count: system underdetermined");
  const double amp = std::sqrt(obs.p_tx);
  for (int g = 0; g < bins; ++g) {
    const Eigen::MatrixXcd system = amp * obs.d[g] * result.selected_atoms;
    const Eigen::VectorXcd coeff = system.completeOrthogonalDecomposition().solve(obs.y[g]);
    result.enhanced[g] = result.selected_atoms * coeff;
  }
}

std::vector<Eigen::VectorXcd> taps_to_subcarriers(const std::vector<Eigen::VectorXcd>& taps,
                                                  int bins) {
  if (taps.empty()) throw std::invalid_argument("no taps");
  const long n = taps[0].size();
  std::vector<Eigen::VectorXcd> h(bins, Eigen::VectorXcd::Zero(n));
  for (int k = 0; k < bins; ++k)
    for (size_t g = 0; g < taps.size(); ++g)
      h[k] += std::polar(1.0, -kTwoPi * k * static_cast<double>(g) / bins) * taps[g];
  return h;
}

std::vector<Eigen::VectorXcd> fd_to_taps(const std::vector<Eigen::VectorXcd>& fd) {
  const int g_len = static_cast<int>(fd.size());
  if (g_len == 0) return {};
  const long n = fd[0].size();
  std::vector<Eigen::VectorXcd> taps(g_len, Eigen::VectorXcd::Zero(n));
  const double scale = 1.0 / std::sqrt(static_cast<double>(g_len));
  for (int gp = 0; gp < g_len; ++gp)
    for (int g = 0; g < g_len; ++g)
      taps[gp] += scale * std::polar(1.0, kTwoPi * g * gp / g_len) * fd[g];
  return taps;
}

namespace {

// Gray-mapped 16-QAM, unit average power. Two bits per axis:
// 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3 (scaled by 1/sqrt(10)).
double qam16_level(int bits) {
  switch (bits) {
    case 0: return -3.0;
    case 1: return -1.0;
    case 3: return 1.0;
    default: return 3.0;
  }
}

int qam16_bits(double level) {
  if (level < -2.0) return 0;
  if (level < 0.0) return 1;
  if (level < 2.0) return 3;
  return 2;
}

}  // namespace

double ber_pipeline(const std::vector<Eigen::VectorXcd>& true_taps,
                    const std::vector<Eigen::VectorXcd>& csi_taps, BerWaveform waveform,
                    double snr_db, long n_bits, const BerConfig& ber_cfg, uint64_t seed) {
  const int k_sub = ber_cfg.subcarriers;
  if (n_bits <= 0 || n_bits % (4L * k_sub) != 0)
    throw std::invalid_argument("bit count must be a positive multiple of 4 * subcarriers");
  const long n_symbols = n_bits / (4L * k_sub);

  const std::vector<Eigen::VectorXcd> h_true = taps_to_subcarriers(true_taps, k_sub);
  const std::vector<Eigen::VectorXcd> h_csi = taps_to_subcarriers(csi_taps, k_sub);

  // Per-subcarrier conjugate beamforming, normalized to unit transmit power
  // per subcarrier; the effective scalar channel keeps the frequency
  // selectivity an imperfect beamformer leaves behind.
  Eigen::VectorXcd h_eff(k_sub);
  for (int k = 0; k < k_sub; ++k) {
    const double norm = h_csi[k].norm();
    h_eff(k) = norm > 0.0 ? Complex(h_true[k].transpose() * h_csi[k].conjugate()) / norm
                          : Complex(0.0, 0.0);
  }

  const double p = ber_cfg.p_tx;
  const double sigma2 = p / linear_from_db(snr_db);
  const double amp = std::sqrt(p);

  // OCDM receive chain combines the inverse DFT and the Fresnel transform.
  Eigen::MatrixXcd tx_transform, rx_transform;
  if (waveform == BerWaveform::ocdm) {
    Eigen::MatrixXcd dft(k_sub, k_sub);
    const double scale = 1.0 / std::sqrt(static_cast<double>(k_sub));
    for (int a = 0; a < k_sub; ++a)
      for (int b = 0; b < k_sub; ++b)
        dft(a, b) = scale * std::polar(1.0, -kTwoPi * a * static_cast<double>(b) / k_sub);
    const Eigen::MatrixXcd phi = dfnt_matrix(k_sub);
    tx_transform = dft * phi.adjoint();       // data -> subcarrier domain
    rx_transform = tx_transform.adjoint();    // subcarrier -> data domain
  }

  Rng rng = Rng::derive(seed, {0x626572ULL});
  long errors = 0;
  std::vector<int> tx_bits(4 * k_sub);
  Eigen::VectorXcd data(k_sub), freq(k_sub), equalized(k_sub), decoded(k_sub);
  for (long sym = 0; sym < n_symbols; ++sym) {
    for (int i = 0; i < 4 * k_sub; ++i) tx_bits[i] = static_cast<int>(rng.next_u64() & 1);
    for (int k = 0; k < k_sub; ++k) {
      const int bi = (tx_bits[4 * k] << 1) | tx_bits[4 * k + 1];
      const int bq = (tx_bits[4 * k + 2] << 1) | tx_bits[4 * k + 3];
      data(k) = Complex(qam16_level(bi), qam16_level(bq)) / std::sqrt(10.0);
    }
    freq = (waveform == BerWaveform::ocdm) ? (tx_transform * data).eval() : data;
    for (int k = 0; k < k_sub; ++k) {
      const Complex rx = amp * h_eff(k) * freq(k) +
                         (sigma2 > 0.0 ? rng.cgaussian(sigma2) : Complex(0.0, 0.0));
      const Complex gain = amp * h_eff(k);
      equalized(k) = std::conj(gain) * rx / (std::norm(gain) + sigma2);
    }
    decoded = (waveform == BerWaveform::ocdm) ? (rx_transform * equalized).eval() : equalized;
    for (int k = 0; k < k_sub; ++k) {
      const double re = decoded(k).real() * std::sqrt(10.0);
      const double im = decoded(k).imag() * std::sqrt(10.0);
      const int bi = qam16_bits(re);
      const int bq = qam16_bits(im);
      errors += ((bi >> 1) & 1) != tx_bits[4 * k];
      errors += (bi & 1) != tx_bits[4 * k + 1];
      errors += ((bq >> 1) & 1) != tx_bits[4 * k + 2];
      errors += (bq & 1) != tx_bits[4 * k + 3];
    }
  }
  return static_cast<double>(errors) / static_cast<double>(n_bits);
}

}  // namespace isac
