#include "isac/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "isac/rng.hpp"

namespace isac {

namespace {

// x mod m into [0, m)
double positive_mod(double x, double m) {
  double r = std::fmod(x, m);
  return r < 0.0 ? r + m : r;
}

int positive_mod_int(int x, int m) {
  int r = x % m;
  return r < 0 ? r + m : r;
}

void require_subcarrier(int k, const WaveformConfig& cfg) {
  if (k < 0 || k >= cfg.K) throw std::invalid_argument("subcarrier index out of range");
}

// Start value of the linear frequency-law argument a0 - B*x/T at x = 0.
double freq_law_start(int k, const WaveformConfig& cfg, ChirpVariant variant) {
  double a0 = static_cast<double>(k) / cfg.T();
  if (variant == ChirpVariant::folded) a0 += cfg.B / 2.0;
  return a0;
}

// Integral over [0, t] of the wrapped frequency law <a0 - B x/T>_B - B/2,
// in cycles. The wrapped value starts at <a0>_B and decreases by exactly B
// over one symbol, so there is a single wrap point x_w = <a0>_B * T/B in
// [0, T); the wrap adds a ramp of slope B after x_w.
double phase_integral(int k, double t, const WaveformConfig& cfg, ChirpVariant variant) {
  const double B = cfg.B;
  const double T = cfg.T();
  const double start = positive_mod(freq_law_start(k, cfg, variant), B);
  const double x_w = start * T / B;
  double integral = (start - B / 2.0) * t - B * t * t / (2.0 * T);
  if (t > x_w) integral += B * (t - x_w);
  return integral;
}

}  // namespace

void WaveformConfig::validate() const {
  std::ostringstream bad;
  if (K < 2) bad << "K must be at least 2; ";
  if (K % 2 != 0) bad << "K must be even; ";
  if (B <= 0.0) bad << "B must be positive; ";
  if (f_c <= 0.0) bad << "f_c must be positive; ";
  if (M < 1) bad << "M must be at least 1; ";
  if (T_GI < 0.0) bad << "T_GI must be nonnegative; ";
  if (T_GI >= T()) bad << "T_GI must be smaller than the symbol duration T; ";
  if (f_ADC < f_LPF) bad << "f_ADC must be at least f_LPF; ";
  if (f_LPF <= 0.0) bad << "f_LPF must be positive; ";
  if (Q() < 1) bad << "Q = floor(f_ADC*(T - T_GI)) must be at least 1; ";
  if (P_Tx <= 0.0) bad << "P_Tx must be positive; ";
  if (P_Tx_com <= 0.0) bad << "P_Tx_com must be positive; ";
  std::string msg = bad.str();
  if (!msg.empty()) throw std::invalid_argument("invalid waveform config: " + msg);
}

double instantaneous_frequency(int k, double t, const WaveformConfig& cfg,
                               ChirpVariant variant) {
  require_subcarrier(k, cfg);
  if (variant == ChirpVariant::plain)
    throw std::invalid_argument("instantaneous frequency is defined for folded/permuted variants");
  if (!std::isfinite(t) || t < 0.0 || t >= cfg.T())
    throw std::invalid_argument("time outside [0, T)");
  const double a0 = freq_law_start(k, cfg, variant);
  return positive_mod(a0 - cfg.B * t / cfg.T(), cfg.B) - cfg.B / 2.0;
}

Complex chirp_eval(int k, double t, const WaveformConfig& cfg, ChirpVariant variant) {
  require_subcarrier(k, cfg);
  if (!std::isfinite(t)) throw std::invalid_argument("non-finite time");
  if (t < 0.0 || t >= cfg.T()) return Complex(0.0, 0.0);

  if (variant == ChirpVariant::plain) {
    const double dt = t - static_cast<double>(k) * cfg.T() / cfg.K;
    const double phase = kPi / 4.0 - kPi * cfg.K / (cfg.T() * cfg.T()) * dt * dt;
    return std::polar(1.0, phase);
  }

  const int kc = (variant == ChirpVariant::permuted) ? positive_mod_int(k - cfg.K / 2, cfg.K) : k;
  const double constant = static_cast<double>(kc) * kc / (2.0 * cfg.K);
  const double phase = kPi / 4.0 + kTwoPi * (phase_integral(k, t, cfg, variant) - constant);
  return std::polar(1.0, phase);
}

Eigen::MatrixXcd dfnt_matrix(int order) {
  if (order < 1) throw std::invalid_argument("transform order must be positive");
  if (order % 2 != 0)
    throw std::invalid_argument("odd-order discrete Fresnel transform is not supported");
  Eigen::MatrixXcd phi(order, order);
  const double scale = 1.0 / std::sqrt(static_cast<double>(order));
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j < order; ++j) {
      // e^{j pi m / G} has period 2G in m; reduce (i-j)^2 exactly in integers.
      long long m = static_cast<long long>(i - j) * (i - j) % (2LL * order);
      phi(i, j) = scale * std::polar(1.0, -kPi / 4.0 + kPi * static_cast<double>(m) / order);
    }
  }
  return phi;
}

std::pair<int, int> subcarrier_spacing_bounds(const WaveformConfig& cfg) {
  const double lo = cfg.B * cfg.T_GI + cfg.f_LPF * cfg.T();
  const double hi = cfg.K - cfg.B * cfg.T_GI - cfg.f_LPF * cfg.T();
  const int d_min = static_cast<int>(std::ceil(lo - 1e-9));
  const int d_max = static_cast<int>(std::floor(hi + 1e-9));
  return {d_min, d_max};
}

std::vector<int> subcarrier_candidate_grid(const WaveformConfig& cfg) {
  auto [d_min, d_max] = subcarrier_spacing_bounds(cfg);
  std::vector<int> grid;
  if (d_min < 1) d_min = 1;
  const int top = std::min(cfg.K - 1, d_max);
  for (int k = 0; k <= top; k += d_min) grid.push_back(k);
  return grid;
}

namespace {

bool spacing_admissible(const std::vector<int>& ks, int d_min, int d_max) {
  for (size_t a = 0; a < ks.size(); ++a)
    for (size_t b = a + 1; b < ks.size(); ++b) {
      int d = std::abs(ks[a] - ks[b]);
      if (d < d_min || d > d_max) return false;
    }
  return true;
}

std::vector<int> spread_antennas(int n, int n_tx) {
  std::vector<int> idx(n);
  if (n == 1) {
    idx[0] = n_tx / 2;
    return idx;
  }
  for (int i = 0; i < n; ++i)
    idx[i] = static_cast<int>(std::llround(static_cast<double>(i) * (n_tx - 1) / (n - 1)));
  return idx;
}

}  // namespace

SensingPlan select_subcarriers(const WaveformConfig& cfg, int n, uint64_t seed, int n_tx) {
  if (n < 1) throw std::invalid_argument("subcarrier count must be positive");
  auto [d_min, d_max] = subcarrier_spacing_bounds(cfg);
  const std::vector<int> grid = subcarrier_candidate_grid(cfg);

  if (static_cast<int>(grid.size()) < n || (n >= 2 && d_min > d_max)) {
    std::ostringstream msg;
    msg << "no admissible selection of " << n << " subcarriers: pairwise spacing must lie in ["
        << d_min << ", " << d_max << "] within [0, " << cfg.K - 1 << "], which admits at most "
        << grid.size() << " subcarriers";
    throw std::runtime_error(msg.str());
  }

  Rng rng(seed);
  std::vector<int> chosen;
  constexpr int kMaxDraws = 10000;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    std::vector<int> pool = grid;
    chosen.clear();
    for (int i = 0; i < n; ++i) {
      size_t pick = rng.index(pool.size());
      chosen.push_back(pool[pick]);
      pool.erase(pool.begin() + static_cast<long>(pick));
    }
    if (spacing_admissible(chosen, d_min, d_max)) break;
    chosen.clear();
  }
  if (chosen.empty()) {
    // Greedy fallback: the leading grid points are admissible by construction.
    chosen.assign(grid.begin(), grid.begin() + n);
  }
  std::sort(chosen.begin(), chosen.end());

  SensingPlan plan;
  plan.subcarriers = chosen;
  if (n_tx > 0) {
    if (n_tx < n) throw std::invalid_argument("fewer transmit antennas than sensing subcarriers");
    plan.tx_antennas = spread_antennas(n, n_tx);
  } else {
    plan.tx_antennas.resize(n);
    for (int i = 0; i < n; ++i) plan.tx_antennas[i] = i;
  }
  return plan;
}

std::optional<CriterionViolation> validate_criterion(const SensingPlan& plan,
                                                     const WaveformConfig& cfg,
                                                     int tau_grid_points) {
  const int n = plan.count();
  const double T = cfg.T();
  for (int g = 0; g < tau_grid_points; ++g) {
    const double tau = cfg.T_GI * static_cast<double>(g) / tau_grid_points;
    const double beat = cfg.B * tau / T;
    if (!(std::abs(beat) < cfg.f_LPF)) return CriterionViolation{1, 0, 0, tau};
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (a == b) continue;
        const double cross = beat + static_cast<double>(plan.subcarriers[b] - plan.subcarriers[a]) / T;
        if (!(std::abs(cross) > cfg.f_LPF)) return CriterionViolation{2, a, b, tau};
        if (!(std::abs(cross + cfg.B) > cfg.f_LPF) || !(std::abs(cross - cfg.B) > cfg.f_LPF))
          return CriterionViolation{3, a, b, tau};
      }
    }
  }
  return std::nullopt;
}

}  // namespace isac
