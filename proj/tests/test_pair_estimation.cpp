// Per-pair estimation tests: model order, reduced blocks, ESPRIT, the
// least-squares objective and its gradient, and the full refinement loop.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "isac/pair_estimation.hpp"
#include "isac/rng.hpp"

using namespace isac;

namespace {

WaveformConfig table_cfg() { return WaveformConfig{}; }

SensingPlan table_plan() {
  SensingPlan plan;
  plan.subcarriers = {0, 48, 96, 192};
  plan.tx_antennas = {0, 170, 341, 511};
  return plan;
}

// Forward model for a single pair.
Eigen::MatrixXcd make_measurement(const std::vector<double>& mu, const std::vector<double>& nu,
                                  const std::vector<Complex>& amp, int n,
                                  const WaveformConfig& cfg, const SensingPlan& plan,
                                  double sigma2, uint64_t seed) {
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(cfg.Q(), cfg.M);
  for (size_t l = 0; l < mu.size(); ++l) {
    const Eigen::VectorXcd b = response_vector(n, mu[l], cfg, plan);
    Eigen::VectorXcd a(cfg.M);
    for (int m = 0; m < cfg.M; ++m) a(m) = std::polar(1.0, kTwoPi * nu[l] * m);
    r += amp[l] * b * a.adjoint();
  }
  if (sigma2 > 0.0) {
    Rng rng(seed);
    for (int m = 0; m < cfg.M; ++m)
      for (int q = 0; q < cfg.Q(); ++q) r(q, m) += rng.cgaussian(sigma2);
  }
  return r;
}

}  // namespace

TEST_CASE("model order estimation") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();

  CHECK(estimate_path_count(Eigen::MatrixXcd::Zero(30, 64), 10) == 0);

  const Eigen::MatrixXcd one =
      make_measurement({0.21}, {0.07}, {Complex(2.0, 1.0)}, 1, cfg, plan, 0.0, 0);
  CHECK(estimate_path_count(one, 10) == 1);

  // Three well-separated paths at 30 dB element SNR.
  int hits = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Rng rng(1000 + t);
    std::vector<Complex> amps;
    for (int l = 0; l < 3; ++l)
      amps.push_back(std::polar(1.0, rng.uniform(0.0, kTwoPi)));
    const Eigen::MatrixXcd r = make_measurement({0.08, 0.22, 0.38}, {-0.2, 0.05, 0.3}, amps, 1,
                                                cfg, plan, 1e-3, 77 + t);
    if (estimate_path_count(r, 10) == 3) ++hits;
  }
  CHECK(hits >= 190);  // >= 95 %
}

TEST_CASE("reduced index sets") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();

  // k = 0: no early block, the late block is everything.
  const ReducedIndexSets zero = reduced_index_sets(0, cfg, plan);
  CHECK(zero.early.empty());
  CHECK(zero.late.size() == 30);
  CHECK(zero.initial == zero.late);

  // k = 192: early samples 1..22, late 25..30, early chosen.
  const ReducedIndexSets high = reduced_index_sets(3, cfg, plan);
  std::vector<int> want_early, want_late;
  for (int q = 1; q <= 22; ++q) want_early.push_back(q);
  for (int q = 25; q <= 30; ++q) want_late.push_back(q);
  CHECK(high.early == want_early);
  CHECK(high.late == want_late);
  CHECK(high.early_chosen);

  // Subset property: both blocks stay inside their regions for every delay.
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const double tau = rng.uniform(0.0, cfg.T_GI * 0.999);
    for (int n = 0; n < plan.count(); ++n) {
      const ReducedIndexSets sets = reduced_index_sets(n, cfg, plan);
      const ResponseSets regions = response_sets(plan.subcarriers[n], tau, cfg);
      for (int q : sets.early)
        CHECK(std::count(regions.region1.begin(), regions.region1.end(), q) == 1);
      for (int q : sets.late)
        CHECK(std::count(regions.region3.begin(), regions.region3.end(), q) == 1);
    }
  }
}

TEST_CASE("restricted response rows form geometric progressions") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const int n = static_cast<int>(rng.index(plan.count()));
    const double mu = rng.uniform(0.0, cfg.mu_max() * 0.999);
    const Eigen::VectorXcd b = response_vector(n, mu, cfg, plan);
    const ReducedIndexSets sets = reduced_index_sets(n, cfg, plan);
    const Complex ratio = std::polar(1.0, kTwoPi * mu);
    for (const auto& block : {sets.early, sets.late}) {
      for (size_t r = 1; r < block.size(); ++r)
        CHECK(std::abs(b(block[r] - 1) - ratio * b(block[r - 1] - 1)) < 1e-12);
    }
  }
}

TEST_CASE("esprit recovers noiseless parameters") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const int n = 3;
  const ReducedIndexSets sets = reduced_index_sets(n, cfg, plan);

  auto reduced = [&](const Eigen::MatrixXcd& r) {
    Eigen::MatrixXcd block(sets.initial.size(), r.cols());
    for (size_t i = 0; i < sets.initial.size(); ++i) block.row(i) = r.row(sets.initial[i] - 1);
    return block;
  };

  // Single path: exact.
  const Eigen::MatrixXcd one =
      make_measurement({0.27}, {0.11}, {Complex(1.0, -0.5)}, n, cfg, plan, 0.0, 0);
  const auto [mu1, nu1] = esprit_2d(reduced(one), 1);
  CHECK(std::abs(mu1(0) - 0.27) < 1e-10);
  CHECK(std::abs(nu1(0) - 0.11) < 1e-10);

  // Two paths at 0.05 separation, and below the DFT resolution at 0.01.
  for (double sep : {0.05, 0.01}) {
    const double base_mu = 0.2, base_nu = -0.1;
    const Eigen::MatrixXcd two = make_measurement(
        {base_mu, base_mu + sep}, {base_nu, base_nu + sep},
        {Complex(1.0, 0.2), Complex(-0.7, 0.6)}, n, cfg, plan, 0.0, 0);
    auto [mu2, nu2] = esprit_2d(reduced(two), 2);
    std::vector<int> order{0, 1};
    if (mu2(0) > mu2(1)) std::swap(order[0], order[1]);
    CHECK(std::abs(mu2(order[0]) - base_mu) < 1e-8);
    CHECK(std::abs(mu2(order[1]) - (base_mu + sep)) < 1e-8);
    CHECK(std::abs(nu2(order[0]) - base_nu) < 1e-8);
    CHECK(std::abs(nu2(order[1]) - (base_nu + sep)) < 1e-8);
  }

  // Conjugating the input negates both parameters.
  const Eigen::MatrixXcd conj_in = one.conjugate();
  const auto [mu_c, nu_c] = esprit_2d(reduced(conj_in), 1);
  CHECK(std::abs(mu_c(0) - (1.0 - 0.27)) < 1e-10);  // -0.27 wrapped into [0, 1)
  CHECK(std::abs(nu_c(0) + 0.11) < 1e-10);

  CHECK_THROWS_AS(esprit_2d(Eigen::MatrixXcd::Ones(2, 2), 2), std::invalid_argument);
}

TEST_CASE("least-squares amplitudes") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const int n = 1;
  const std::vector<double> mu{0.1, 0.32};
  const std::vector<double> nu{0.05, -0.2};
  const std::vector<Complex> amp{Complex(1.2, -0.4), Complex(-0.5, 0.9)};
  const Eigen::MatrixXcd r = make_measurement(mu, nu, amp, n, cfg, plan, 0.0, 0);
  const Eigen::Map<const Eigen::VectorXcd> rbar(r.data(), r.size());

  Eigen::VectorXd mu_v = Eigen::Map<const Eigen::VectorXd>(mu.data(), 2);
  Eigen::VectorXd nu_v = Eigen::Map<const Eigen::VectorXd>(nu.data(), 2);
  const AmplitudeFit fit = ls_amplitudes(mu_v, nu_v, rbar, n, cfg, plan);
  CHECK(!fit.rank_deficient);
  CHECK(std::abs(fit.alpha(0) - amp[0]) < 1e-10);
  CHECK(std::abs(fit.alpha(1) - amp[1]) < 1e-10);

  // Zero data -> zero amplitudes.
  const AmplitudeFit zero =
      ls_amplitudes(mu_v, nu_v, Eigen::VectorXcd::Zero(r.size()), n, cfg, plan);
  CHECK(zero.alpha.norm() == 0.0);

  // Duplicate parameters -> reported rank deficiency.
  Eigen::VectorXd dup_mu(2), dup_nu(2);
  dup_mu << 0.1, 0.1;
  dup_nu << 0.05, 0.05;
  CHECK(ls_amplitudes(dup_mu, dup_nu, rbar, n, cfg, plan).rank_deficient);

  // Residual orthogonality (normal equations).
  Rng rng(3);
  Eigen::VectorXcd noisy = rbar;
  for (long i = 0; i < noisy.size(); ++i) noisy(i) += rng.cgaussian(0.1);
  const AmplitudeFit noisy_fit = ls_amplitudes(mu_v, nu_v, noisy, n, cfg, plan);
  // Rebuild the model matrix through the public objective: the gradient of
  // ||phi a - y||^2 in a is 2 phi^H (phi a - y) = 0 at the LS solution.
  const double base = objective(mu_v, nu_v, noisy_fit.alpha, noisy, n, cfg, plan);
  for (int l = 0; l < 2; ++l) {
    for (double eps : {1e-6, -1e-6}) {
      Eigen::VectorXcd bumped = noisy_fit.alpha;
      bumped(l) += eps;
      CHECK(objective(mu_v, nu_v, bumped, noisy, n, cfg, plan) >= base - 1e-9);
    }
  }
}

TEST_CASE("objective and gradient") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const int n = 2;

  Eigen::VectorXd mu(1), nu(1);
  mu << 0.23;
  nu << -0.07;
  Eigen::VectorXcd alpha(1);
  alpha << Complex(0.8, 0.3);
  const Eigen::MatrixXcd r =
      make_measurement({0.23}, {-0.07}, {Complex(0.8, 0.3)}, n, cfg, plan, 0.0, 0);
  const Eigen::Map<const Eigen::VectorXcd> rbar(r.data(), r.size());

  // Perfect fit: zero objective and zero gradient.
  CHECK(objective(mu, nu, alpha, rbar, n, cfg, plan) < 1e-20);
  const ObjectiveGradient at_min = objective_gradient(mu, nu, alpha, rbar, n, cfg, plan);
  CHECK(std::abs(at_min.d_mu(0)) < 1e-8);
  CHECK(std::abs(at_min.d_nu(0)) < 1e-8);

  // alpha = 0: objective equals the data energy.
  Eigen::VectorXcd zero_alpha = Eigen::VectorXcd::Zero(1);
  CHECK(objective(mu, nu, zero_alpha, rbar, n, cfg, plan) ==
        doctest::Approx(rbar.squaredNorm()));

  // Loop oracle at a random point.
  Eigen::VectorXd mu2(1), nu2(1);
  mu2 << 0.31;
  nu2 << 0.12;
  const Eigen::VectorXcd b = response_vector(n, mu2(0), cfg, plan);
  double want = 0.0;
  for (int m = 0; m < cfg.M; ++m)
    for (int q = 0; q < cfg.Q(); ++q) {
      const Complex model = alpha(0) * b(q) * std::polar(1.0, -kTwoPi * nu2(0) * m);
      want += std::norm(model - r(q, m));
    }
  CHECK(objective(mu2, nu2, alpha, rbar, n, cfg, plan) == doctest::Approx(want));

  // Finite-difference agreement away from breakpoints. Unit-energy data
  // keeps the finite-difference roundoff floor far below the tolerance (the
  // gradient is scale-equivariant).
  Rng rng(11);
  const Eigen::VectorXcd r_unit = rbar / rbar.norm();
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd mu_r(2), nu_r(2);
    mu_r << rng.uniform(0.01, cfg.mu_max() * 0.98), rng.uniform(0.01, cfg.mu_max() * 0.98);
    nu_r << rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45);
    Eigen::VectorXcd a_r(2);
    a_r << rng.cgaussian(1.0 / 1900.0), rng.cgaussian(1.0 / 1900.0);
    const ObjectiveGradient grad = objective_gradient(mu_r, nu_r, a_r, r_unit, n, cfg, plan);
    if (grad.near_breakpoint) continue;

    const double h = 1e-7;
    for (int l = 0; l < 2; ++l) {
      Eigen::VectorXd hi = mu_r, lo = mu_r;
      hi(l) += h;
      lo(l) -= h;
      // Keep the window sets frozen across the difference: skip if the step
      // would cross a breakpoint.
      const ResponseSets s_hi = response_sets(plan.subcarriers[n], cfg.to_tau(hi(l)), cfg);
      const ResponseSets s_lo = response_sets(plan.subcarriers[n], cfg.to_tau(lo(l)), cfg);
      if (s_hi.region2 != s_lo.region2) continue;
      const double fd = (objective(hi, nu_r, a_r, r_unit, n, cfg, plan) -
                         objective(lo, nu_r, a_r, r_unit, n, cfg, plan)) /
                        (2.0 * h);
      CHECK(grad.d_mu(l) == doctest::Approx(fd).epsilon(1e-5));
      Eigen::VectorXd nhi = nu_r, nlo = nu_r;
      nhi(l) += h;
      nlo(l) -= h;
      const double fd_nu = (objective(mu_r, nhi, a_r, r_unit, n, cfg, plan) -
                            objective(mu_r, nlo, a_r, r_unit, n, cfg, plan)) /
                           (2.0 * h);
      CHECK(grad.d_nu(l) == doctest::Approx(fd_nu).epsilon(1e-5));
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("nu gradient vanishes with a single symbol") {
  WaveformConfig cfg = table_cfg();
  cfg.M = 1;
  const SensingPlan plan = table_plan();
  Eigen::VectorXd mu(1), nu(1);
  mu << 0.2;
  nu << 0.0;
  Eigen::VectorXcd alpha(1);
  alpha << Complex(1.0, 0.0);
  Eigen::VectorXcd rbar = Eigen::VectorXcd::Random(cfg.Q());
  const ObjectiveGradient grad = objective_gradient(mu, nu, alpha, rbar, 1, cfg, plan);
  CHECK(grad.d_nu(0) == doctest::Approx(0.0));
}

TEST_CASE("Barzilai-Borwein step") {
  Eigen::VectorXd y(3);
  y << 1.0, -2.0, 0.5;
  CHECK(bb_step(y, y, 1e-12, 1e12) == doctest::Approx(1.0));
  CHECK(bb_step(2.0 * y, y, 1e-12, 1e12) == doctest::Approx(2.0));
  CHECK(bb_step(-y, y, 1e-12, 1e12) == 1e-12);  // fallback on non-descent
  CHECK(bb_step(y, y, 1e-12, 0.5) == 0.5);      // clamp

  // Scalar quadratic x^2/2: gradient x, BB converges immediately after the
  // bootstrap step.
  double x = 1.0, prev_x = 0.0, prev_g = 0.0;
  bool has_prev = false;
  int iters = 0;
  while (std::abs(x) >= 1e-8 && iters < 5) {
    const double g = x;
    double gamma = 0.5;
    if (has_prev) {
      Eigen::VectorXd s(1), yv(1);
      s << x - prev_x;
      yv << g - prev_g;
      gamma = bb_step(s, yv, 1e-12, 1e12);
    }
    prev_x = x;
    prev_g = g;
    has_prev = true;
    x -= gamma * g;
    ++iters;
  }
  CHECK(std::abs(x) < 1e-8);
  CHECK(iters <= 5);
}

TEST_CASE("full pair estimation") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const int n = 2;

  // Noiseless single path: exact recovery, refinement idles.
  const Eigen::MatrixXcd one =
      make_measurement({0.18}, {0.21}, {Complex(1.0, 1.0)}, n, cfg, plan, 0.0, 0);
  const PairEstimate est = estimate_pair(one, n, 0, cfg, plan);
  REQUIRE(est.path_count() == 1);
  CHECK(std::abs(est.mu(0) - 0.18) < 1e-8);
  CHECK(std::abs(est.nu(0) - 0.21) < 1e-8);
  CHECK(est.objective_trace.back() <= est.objective_trace.front());

  // H_max = 0 reproduces the subspace initialization.
  PairEstimationOptions no_refine;
  no_refine.h_max = 0;
  const PairEstimate ini = estimate_pair(one, n, 0, cfg, plan, no_refine);
  CHECK(ini.objective_trace.size() == 1);
  CHECK(std::abs(ini.mu(0) - 0.18) < 1e-8);

  // Zero matrix: empty estimate.
  const PairEstimate empty = estimate_pair(Eigen::MatrixXcd::Zero(cfg.Q(), cfg.M), n, 0, cfg, plan);
  CHECK(empty.path_count() == 0);

  // Refinement reduces the parameter error versus the initialization at
  // moderate noise in nearly every trial.
  int improved = 0, valid = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Rng rng(5000 + t);
    std::vector<double> mu_true, nu_true;
    std::vector<Complex> amps;
    for (int l = 0; l < 3; ++l) {
      mu_true.push_back(rng.uniform(0.03, cfg.mu_max() * 0.95));
      nu_true.push_back(rng.uniform(-0.4, 0.4));
      amps.push_back(std::polar(1.0, rng.uniform(0.0, kTwoPi)));
    }
    // Element SNR 20 dB relative to unit amplitudes.
    const Eigen::MatrixXcd r =
        make_measurement(mu_true, nu_true, amps, n, cfg, plan, 0.01, 600 + t);
    PairEstimationOptions forced;
    forced.forced_order = 3;
    const PairEstimate refined = estimate_pair(r, n, 0, cfg, plan, forced);
    forced.h_max = 0;
    const PairEstimate raw = estimate_pair(r, n, 0, cfg, plan, forced);
    if (refined.path_count() != 3 || raw.path_count() != 3) continue;
    ++valid;

    auto error = [&](const PairEstimate& e) {
      // Greedy truth-to-estimate matching on the joint parameter distance.
      double total = 0.0;
      std::vector<bool> used(3, false);
      for (int l = 0; l < 3; ++l) {
        double best = 1e30;
        int pick = -1;
        for (int c = 0; c < 3; ++c) {
          if (used[c]) continue;
          const double d = std::pow(e.mu(c) - mu_true[l], 2) +
                           std::pow(e.nu(c) - nu_true[l], 2);
          if (d < best) {
            best = d;
            pick = c;
          }
        }
        used[pick] = true;
        total += best;
      }
      return total;
    };
    if (error(refined) < error(raw)) ++improved;
  }
  CHECK(valid >= 190);
  CHECK(improved >= static_cast<int>(0.9 * valid));
}

TEST_CASE("objective trace is non-increasing") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const Eigen::MatrixXcd r = make_measurement({0.12, 0.3}, {0.1, -0.25},
                                              {Complex(1.0, 0.0), Complex(0.3, -0.8)}, 1, cfg,
                                              plan, 0.02, 42);
  const PairEstimate est = estimate_pair(r, 1, 0, cfg, plan);
  for (size_t i = 1; i < est.objective_trace.size(); ++i)
    CHECK(est.objective_trace[i] <= est.objective_trace[i - 1] + 1e-12);
}

TEST_CASE("full-axis subspace estimation breaks under the blank window") {
  const WaveformConfig cfg = table_cfg();
  const SensingPlan plan = table_plan();
  const int n = 2;  // subcarrier 96: the blank window falls inside the samples

  double err_reduced = 0.0, err_full = 0.0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    Rng rng(9000 + t);
    const double mu_true = rng.uniform(0.15, 0.45);
    const double nu_true = rng.uniform(-0.3, 0.3);
    const Eigen::MatrixXcd r = make_measurement({mu_true}, {nu_true},
                                                {std::polar(1.0, rng.uniform(0.0, kTwoPi))}, n,
                                                cfg, plan, 0.01, 300 + t);
    PairEstimationOptions reduced;
    reduced.forced_order = 1;
    const PairEstimate good = estimate_pair(r, n, 0, cfg, plan, reduced);
    PairEstimationOptions full = reduced;
    full.reduced_block = false;
    full.h_max = 0;  // isolate the subspace stage
    const PairEstimate bad = estimate_pair(r, n, 0, cfg, plan, full);
    err_reduced += std::pow(good.mu(0) - mu_true, 2);
    err_full += std::pow(bad.mu(0) - mu_true, 2);
  }
  CHECK(err_full >= 10.0 * err_reduced);
}
