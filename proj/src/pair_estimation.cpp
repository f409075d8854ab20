#include "isac/pair_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "isac/csv.hpp"

namespace isac {

namespace {

double wrap_nu(double nu) { return nu - std::round(nu); }

// Map an ESPRIT angle estimate in [0, 1) onto the physical delay domain
// [0, mu_max): values just below 1 are aliases of small negative noise.
double clamp_mu(double mu, double mu_max) {
  if (mu >= mu_max) {
    if (mu - mu_max > 1.0 - mu)  // closer to 0 than to mu_max
      return 0.0;
    return std::nexttoward(mu_max, 0.0);
  }
  if (mu < 0.0) return 0.0;
  return mu;
}

Eigen::VectorXcd doppler_steering(double nu, int m_count) {
  Eigen::VectorXcd a(m_count);
  for (int m = 0; m < m_count; ++m) a(m) = std::polar(1.0, kTwoPi * nu * m);
  return a;
}

// Column-wise Kronecker model matrix: column l = kron(conj(a(nu_l)), b(mu_l)).
Eigen::MatrixXcd model_matrix(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu, int n,
                              const WaveformConfig& cfg, const SensingPlan& plan) {
  const int Q = cfg.Q();
  const int M = cfg.M;
  const int L = static_cast<int>(mu.size());
  Eigen::MatrixXcd phi(static_cast<long>(Q) * M, L);
  for (int l = 0; l < L; ++l) {
    const Eigen::VectorXcd b = response_vector(n, mu(l), cfg, plan);
    const Eigen::VectorXcd a = doppler_steering(nu(l), M);
    for (int m = 0; m < M; ++m)
      phi.col(l).segment(static_cast<long>(m) * Q, Q) = std::conj(a(m)) * b;
  }
  return phi;
}

}  // namespace

int estimate_path_count(const Eigen::MatrixXcd& measurement, int cap) {
  const int rows = static_cast<int>(measurement.rows());
  const int cols = static_cast<int>(measurement.cols());
  if (rows < 2 || cols < 2) throw std::invalid_argument("measurement must be at least 2 x 2");
  if (measurement.norm() == 0.0) return 0;

  const int p = std::min(rows, cols);
  const int snapshots = std::max(rows, cols);
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(measurement);
  Eigen::VectorXd lambda = svd.singularValues().array().square() / snapshots;
  const double floor_value = std::max(lambda(0), 1e-300) * 1e-16;
  for (int i = 0; i < p; ++i) lambda(i) = std::max(lambda(i), floor_value);

  double best_score = std::numeric_limits<double>::infinity();
  int best_k = 0;
  for (int k = 0; k < p; ++k) {
    const int m = p - k;
    double log_geo = 0.0, arith = 0.0;
    for (int i = k; i < p; ++i) {
      log_geo += std::log(lambda(i));
      arith += lambda(i);
    }
    log_geo /= m;
    arith /= m;
    const double score = -snapshots * m * (log_geo - std::log(arith)) +
                         0.5 * k * (2.0 * p - k) * std::log(static_cast<double>(snapshots));
    if (score < best_score) {
      best_score = score;
      best_k = k;
    }
  }
  return std::clamp(best_k, 0, cap);
}

ReducedIndexSets reduced_index_sets(int n, const WaveformConfig& cfg, const SensingPlan& plan) {
  const int Q = cfg.Q();
  const double k_time = static_cast<double>(plan.subcarriers[n]) / cfg.B;
  // Count of samples with T_GI + (q-1)/f_ADC < k_n/B, nudged against
  // representation error at exact boundaries.
  const double early_edge = (k_time - cfg.T_GI) * cfg.f_ADC;
  const int early_count = std::clamp(static_cast<int>(std::ceil(early_edge - 1e-9)), 0, Q);
  const double late_edge = k_time * cfg.f_ADC;  // (q-1) >= k_time * f_ADC
  const int first_late = std::clamp(static_cast<int>(std::ceil(late_edge - 1e-9)), 0, Q);

  ReducedIndexSets sets;
  for (int q = 1; q <= early_count; ++q) sets.early.push_back(q);
  for (int q = first_late + 1; q <= Q; ++q) sets.late.push_back(q);
  sets.early_chosen = sets.early.size() >= sets.late.size();
  sets.initial = sets.early_chosen ? sets.early : sets.late;
  return sets;
}

namespace {

// Signal subspace of the column space of X, with forward smoothing over
// windows of length sub_len along the rows.
Eigen::MatrixXcd signal_subspace(const Eigen::MatrixXcd& x, int sub_len, int order) {
  const int rows = static_cast<int>(x.rows());
  Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(sub_len, sub_len);
  for (int s = 0; s + sub_len <= rows; ++s) {
    const auto window = x.middleRows(s, sub_len);
    cov.noalias() += window * window.adjoint();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(cov);
  const Eigen::VectorXd values = eig.eigenvalues();
  const double top = values(sub_len - 1);
  if (top <= 0.0 || values(sub_len - order) < 1e-28 * top)
    throw std::runtime_error("signal subspace rank collapse");
  return eig.eigenvectors().rightCols(order);
}

// Shift-invariance rotation angles of a geometric-progression subspace.
Eigen::VectorXd esprit_angles(const Eigen::MatrixXcd& x, int order) {
  const int rows = static_cast<int>(x.rows());
  if (rows <= order) throw std::invalid_argument("block too small for the requested path count");
  const int sub_len = (order == 1) ? rows : std::max(order + 1, (2 * rows + 2) / 3);
  const Eigen::MatrixXcd u = signal_subspace(x, std::min(sub_len, rows), order);
  const int p = static_cast<int>(u.rows());
  const Eigen::MatrixXcd u1 = u.topRows(p - 1);
  const Eigen::MatrixXcd u2 = u.bottomRows(p - 1);
  const Eigen::MatrixXcd psi =
      u1.completeOrthogonalDecomposition().solve(u2);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> eig(psi);
  Eigen::VectorXd angles(order);
  for (int i = 0; i < order; ++i) angles(i) = std::arg(eig.eigenvalues()(i)) / kTwoPi;
  return angles;
}

// Least-squares fit of the block against candidate (mu, nu) pairs; returns
// the squared residual.
double pairing_residual(const Eigen::MatrixXcd& block, const Eigen::VectorXd& mu,
                        const Eigen::VectorXd& nu) {
  const int rows = static_cast<int>(block.rows());
  const int cols = static_cast<int>(block.cols());
  const int L = static_cast<int>(mu.size());
  Eigen::MatrixXcd phi(static_cast<long>(rows) * cols, L);
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXcd v(rows), w(cols);
    for (int r = 0; r < rows; ++r) v(r) = std::polar(1.0, kTwoPi * mu(l) * r);
    for (int m = 0; m < cols; ++m) w(m) = std::polar(1.0, -kTwoPi * nu(l) * m);
    for (int m = 0; m < cols; ++m)
      phi.col(l).segment(static_cast<long>(m) * rows, rows) = w(m) * v;
  }
  const Eigen::Map<const Eigen::VectorXcd> y(block.data(), block.size());
  const Eigen::VectorXcd alpha = phi.completeOrthogonalDecomposition().solve(y);
  return (phi * alpha - y).squaredNorm();
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> esprit_2d(const Eigen::MatrixXcd& block,
                                                      int path_count) {
  if (path_count < 1) throw std::invalid_argument("path count must be positive");
  if (block.rows() <= path_count || block.cols() <= path_count)
    throw std::invalid_argument("block dimensions must exceed the path count");

  Eigen::VectorXd mu = esprit_angles(block, path_count);
  for (int i = 0; i < path_count; ++i) mu(i) -= std::floor(mu(i));  // into [0, 1)
  Eigen::VectorXd nu = esprit_angles(block.adjoint(), path_count);
  for (int i = 0; i < path_count; ++i) nu(i) = wrap_nu(nu(i));

  if (path_count == 1) return {mu, nu};

  // Pair the two independently estimated axes by fit quality.
  std::vector<int> order(path_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> best = order;
  if (path_count <= 4) {
    double best_res = std::numeric_limits<double>::infinity();
    std::vector<int> perm = order;
    std::sort(perm.begin(), perm.end());
    do {
      Eigen::VectorXd nu_perm(path_count);
      for (int i = 0; i < path_count; ++i) nu_perm(i) = nu(perm[i]);
      const double res = pairing_residual(block, mu, nu_perm);
      if (res < best_res) {
        best_res = res;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // Greedy: assign each mu the free nu with the strongest single-atom fit.
    const Eigen::Map<const Eigen::VectorXcd> y(block.data(), block.size());
    const int rows = static_cast<int>(block.rows());
    const int cols = static_cast<int>(block.cols());
    Eigen::MatrixXd score(path_count, path_count);
    for (int i = 0; i < path_count; ++i) {
      Eigen::VectorXcd v(rows);
      for (int r = 0; r < rows; ++r) v(r) = std::polar(1.0, kTwoPi * mu(i) * r);
      for (int jj = 0; jj < path_count; ++jj) {
        Eigen::VectorXcd atom(static_cast<long>(rows) * cols);
        for (int m = 0; m < cols; ++m)
          atom.segment(static_cast<long>(m) * rows, rows) =
              std::polar(1.0, -kTwoPi * nu(jj) * m) * v;
        score(i, jj) = std::abs(atom.dot(y));
      }
    }
    std::vector<bool> used(path_count, false);
    for (int i = 0; i < path_count; ++i) {
      int pick = -1;
      for (int jj = 0; jj < path_count; ++jj)
        if (!used[jj] && (pick < 0 || score(i, jj) > score(i, pick))) pick = jj;
      best[i] = pick;
      used[pick] = true;
    }
  }
  Eigen::VectorXd nu_paired(path_count);
  for (int i = 0; i < path_count; ++i) nu_paired(i) = nu(best[i]);
  return {mu, nu_paired};
}

AmplitudeFit ls_amplitudes(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                           const Eigen::VectorXcd& rbar, int n, const WaveformConfig& cfg,
                           const SensingPlan& plan) {
  if (mu.size() != nu.size()) throw std::invalid_argument("mu/nu size mismatch");
  AmplitudeFit fit;
  if (mu.size() == 0) {
    fit.alpha.resize(0);
    return fit;
  }
  const Eigen::MatrixXcd phi = model_matrix(mu, nu, n, cfg, plan);
  if (phi.rows() != rbar.size()) throw std::invalid_argument("rbar length mismatch");
  auto cod = phi.completeOrthogonalDecomposition();
  cod.setThreshold(1e-10);  // near-duplicate parameter columns count as one
  fit.alpha = cod.solve(rbar);
  fit.rank_deficient = cod.rank() < mu.size();
  return fit;
}

double objective(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                 const Eigen::VectorXcd& alpha, const Eigen::VectorXcd& rbar, int n,
                 const WaveformConfig& cfg, const SensingPlan& plan) {
  if (mu.size() == 0) return rbar.squaredNorm();
  const Eigen::MatrixXcd phi = model_matrix(mu, nu, n, cfg, plan);
  return (phi * alpha - rbar).squaredNorm();
}

namespace {

struct JacobianColumns {
  Eigen::MatrixXcd d_mu;  // QM x L, column l = alpha_l * d(atom_l)/d(mu_l)
  Eigen::MatrixXcd d_nu;
  Eigen::VectorXcd residual;
};

JacobianColumns residual_jacobian(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                                  const Eigen::VectorXcd& alpha, const Eigen::VectorXcd& rbar,
                                  int n, const WaveformConfig& cfg, const SensingPlan& plan) {
  const int Q = cfg.Q();
  const int M = cfg.M;
  const int L = static_cast<int>(mu.size());
  const double phase_step = kTwoPi * cfg.f_ADC * cfg.T();
  JacobianColumns jac;
  jac.d_mu.resize(static_cast<long>(Q) * M, L);
  jac.d_nu.resize(static_cast<long>(Q) * M, L);
  Eigen::MatrixXcd phi(static_cast<long>(Q) * M, L);
  const Complex imag_unit(0.0, 1.0);
  for (int l = 0; l < L; ++l) {
    const ResponseSets sets = response_sets(plan.subcarriers[n], cfg.to_tau(mu(l)), cfg);
    const Eigen::VectorXcd b = response_vector_with_sets(sets, mu(l), cfg);
    Eigen::VectorXcd db = Eigen::VectorXcd::Zero(Q);
    for (int q : sets.region1)
      db(q - 1) = imag_unit * (kTwoPi * (q - 1)) * b(q - 1);
    for (int q : sets.region3)
      db(q - 1) = imag_unit * (kTwoPi * (q - 1) - phase_step) * b(q - 1);
    const Eigen::VectorXcd a = doppler_steering(nu(l), M);
    for (int m = 0; m < M; ++m) {
      const Complex am_conj = std::conj(a(m));
      const Complex dam_conj = -imag_unit * (kTwoPi * m) * am_conj;
      phi.col(l).segment(static_cast<long>(m) * Q, Q) = am_conj * b;
      jac.d_mu.col(l).segment(static_cast<long>(m) * Q, Q) = alpha(l) * am_conj * db;
      jac.d_nu.col(l).segment(static_cast<long>(m) * Q, Q) = alpha(l) * dam_conj * b;
    }
  }
  jac.residual = phi * alpha - rbar;
  return jac;
}

}  // namespace

ObjectiveGradient objective_gradient(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu,
                                     const Eigen::VectorXcd& alpha, const Eigen::VectorXcd& rbar,
                                     int n, const WaveformConfig& cfg, const SensingPlan& plan,
                                     double breakpoint_tol) {
  const int L = static_cast<int>(mu.size());
  ObjectiveGradient grad;
  grad.d_mu = Eigen::VectorXd::Zero(L);
  grad.d_nu = Eigen::VectorXd::Zero(L);
  if (L == 0) return grad;

  const JacobianColumns jac = residual_jacobian(mu, nu, alpha, rbar, n, cfg, plan);
  for (int l = 0; l < L; ++l) {
    grad.d_mu(l) = 2.0 * std::real(jac.residual.dot(jac.d_mu.col(l)));
    grad.d_nu(l) = 2.0 * std::real(jac.residual.dot(jac.d_nu.col(l)));
  }

  const std::vector<double> breaks = response_breakpoints(n, cfg, plan);
  for (int l = 0; l < L && !grad.near_breakpoint; ++l)
    for (double bp : breaks)
      if (std::abs(mu(l) - bp) < breakpoint_tol) {
        grad.near_breakpoint = true;
        break;
      }
  return grad;
}

double bb_step(const Eigen::VectorXd& s, const Eigen::VectorXd& y, double gamma_min,
               double gamma_max) {
  const double sy = s.dot(y);
  const double yy = y.dot(y);
  if (!(sy > 0.0) || !(yy > 0.0)) return gamma_min;
  return std::clamp(sy / yy, gamma_min, gamma_max);
}

PairEstimate estimate_pair(const Eigen::MatrixXcd& measurement, int n, int j,
                           const WaveformConfig& cfg, const SensingPlan& plan,
                           const PairEstimationOptions& options) {
  const int Q = cfg.Q();
  const int M = cfg.M;
  if (measurement.rows() != Q || measurement.cols() != M)
    throw std::invalid_argument("measurement dimensions do not match the config");
  const Eigen::Map<const Eigen::VectorXcd> rbar(measurement.data(), measurement.size());

  PairEstimate est;
  est.n = n;
  est.j = j;

  const ReducedIndexSets sets = reduced_index_sets(n, cfg, plan);
  std::vector<int> block_rows;
  if (options.reduced_block) {
    block_rows = sets.initial;
  } else {
    for (int q = 1; q <= Q; ++q) block_rows.push_back(q);
  }
  const int block_size = static_cast<int>(block_rows.size());
  const int default_cap = std::min(block_size, M) - 1;
  const int cap = options.order_cap >= 0 ? std::min(options.order_cap, default_cap) : default_cap;
  const int order = options.forced_order >= 0 ? std::min(options.forced_order, cap)
                                              : estimate_path_count(measurement, cap);
  if (order <= 0) {
    est.objective_trace.push_back(rbar.squaredNorm());
    return est;
  }

  Eigen::MatrixXcd block(block_size, M);
  for (int r = 0; r < block_size; ++r) block.row(r) = measurement.row(block_rows[r] - 1);

  auto [mu, nu] = esprit_2d(block, order);
  const double mu_limit = cfg.mu_max();
  for (int l = 0; l < order; ++l) mu(l) = clamp_mu(mu(l), mu_limit);

  Eigen::VectorXcd alpha = ls_amplitudes(mu, nu, rbar, n, cfg, plan).alpha;
  double best_objective = objective(mu, nu, alpha, rbar, n, cfg, plan);
  Eigen::VectorXd best_mu = mu, best_nu = nu;
  Eigen::VectorXcd best_alpha = alpha;
  est.objective_trace.push_back(best_objective);

  Eigen::VectorXd prev_params, prev_grad;
  for (int h = 1; h <= options.h_max; ++h) {
    const ObjectiveGradient grad = objective_gradient(mu, nu, alpha, rbar, n, cfg, plan);
    Eigen::VectorXd g(2 * order), params(2 * order);
    g << grad.d_mu, grad.d_nu;
    params << mu, nu;

    double gamma;
    if (h == 1 || prev_grad.size() == 0) {
      // Exact line search along -g on the Gauss-Newton model of the residual.
      const JacobianColumns jac = residual_jacobian(mu, nu, alpha, rbar, n, cfg, plan);
      Eigen::VectorXcd jd = Eigen::VectorXcd::Zero(jac.residual.size());
      for (int l = 0; l < order; ++l)
        jd -= grad.d_mu(l) * jac.d_mu.col(l) + grad.d_nu(l) * jac.d_nu.col(l);
      const double denom = jd.squaredNorm();
      gamma = denom > 0.0 ? std::clamp(0.5 * g.squaredNorm() / denom, options.gamma_min,
                                       options.gamma_max)
                          : options.gamma_min;
    } else {
      const Eigen::VectorXd s = params - prev_params;
      const Eigen::VectorXd y = g - prev_grad;
      gamma = bb_step(s, y, options.gamma_min, options.gamma_max);
    }
    prev_params = params;
    prev_grad = g;

    for (int l = 0; l < order; ++l) {
      mu(l) = clamp_mu(mu(l) - gamma * grad.d_mu(l), mu_limit);
      nu(l) = wrap_nu(nu(l) - gamma * grad.d_nu(l));
    }
    alpha = ls_amplitudes(mu, nu, rbar, n, cfg, plan).alpha;
    const double g_now = objective(mu, nu, alpha, rbar, n, cfg, plan);
    if (g_now < best_objective) {
      best_objective = g_now;
      best_mu = mu;
      best_nu = nu;
      best_alpha = alpha;
    }
    est.objective_trace.push_back(best_objective);
  }

  est.mu = best_mu;
  est.nu = best_nu;
  est.alpha = best_alpha;
  return est;
}

std::vector<PairEstimate> estimate_all_pairs(const MeasurementCube& cube,
                                             const PairEstimationOptions& options) {
  std::vector<PairEstimate> out;
  out.reserve(cube.data.size());
  for (int n = 0; n < cube.plan.count(); ++n)
    for (int j = 0; j < cube.n_rx; ++j)
      out.push_back(estimate_pair(cube.at(n, j), n, j, cube.cfg, cube.plan, options));
  return out;
}

std::string pair_estimates_csv(const std::vector<PairEstimate>& estimates) {
  CsvWriter csv({"n", "j", "path", "mu", "nu", "alpha_re", "alpha_im"});
  for (const PairEstimate& e : estimates) {
    for (int l = 0; l < e.path_count(); ++l) {
      csv.add_row({std::to_string(e.n), std::to_string(e.j), std::to_string(l),
                   format_double(e.mu(l)), format_double(e.nu(l)),
                   format_double(e.alpha(l).real()), format_double(e.alpha(l).imag())});
    }
  }
  return csv.str();
}

}  // namespace isac
