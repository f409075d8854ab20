#include "isac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace isac {

std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  if (rows > cols) throw std::invalid_argument("assignment needs rows <= cols");
  std::vector<int> best(rows, -1);
  if (rows == 0) return best;

  if (rows <= 8) {
    std::vector<int> columns(cols);
    std::iota(columns.begin(), columns.end(), 0);
    double best_total = std::numeric_limits<double>::infinity();
    // Permute column choices; only the first `rows` entries matter.
    std::vector<int> pick(rows);
    std::vector<bool> used(cols, false);
    std::function<void(int, double)> recurse = [&](int r, double acc) {
      if (acc >= best_total) return;
      if (r == rows) {
        best_total = acc;
        best.assign(pick.begin(), pick.end());
        return;
      }
      for (int c = 0; c < cols; ++c) {
        if (used[c]) continue;
        used[c] = true;
        pick[r] = c;
        recurse(r + 1, acc + cost(r, c));
        used[c] = false;
      }
    };
    recurse(0, 0.0);
    return best;
  }

  // Greedy fallback for large problems.
  std::vector<bool> used(cols, false);
  std::vector<int> order(rows);
  std::iota(order.begin(), order.end(), 0);
  for (int r : order) {
    int pick = -1;
    for (int c = 0; c < cols; ++c)
      if (!used[c] && (pick < 0 || cost(r, c) < cost(r, pick))) pick = c;
    used[pick] = true;
    best[r] = pick;
  }
  return best;
}

TmseBreakdown tmse(const std::vector<PairEstimate>& estimates, const PairPathTable& truth,
                   int n_rx, TmseKind kind) {
  TmseBreakdown out;
  for (const PairEstimate& est : estimates) {
    const std::vector<PathParams>& paths = truth.at(est.n).at(est.j);
    const int n_true = static_cast<int>(paths.size());
    const int n_est = est.path_count();

    // Joint matching: truths are rows when fewer, estimates otherwise.
    std::vector<int> truth_match(n_true, -1);
    if (n_true > 0 && n_est > 0) {
      if (n_true <= n_est) {
        Eigen::MatrixXd cost(n_true, n_est);
        for (int l = 0; l < n_true; ++l)
          for (int e = 0; e < n_est; ++e)
            cost(l, e) = std::pow(est.mu(e) - paths[l].mu, 2) +
                         std::pow(est.nu(e) - paths[l].nu, 2);
        truth_match = min_cost_assignment(cost);
      } else {
        Eigen::MatrixXd cost(n_est, n_true);
        for (int e = 0; e < n_est; ++e)
          for (int l = 0; l < n_true; ++l)
            cost(e, l) = std::pow(est.mu(e) - paths[l].mu, 2) +
                         std::pow(est.nu(e) - paths[l].nu, 2);
        const std::vector<int> est_match = min_cost_assignment(cost);
        for (int e = 0; e < n_est; ++e) truth_match[est_match[e]] = e;
      }
    }

    int matched = 0;
    for (int l = 0; l < n_true; ++l) {
      const double truth_value = (kind == TmseKind::mu) ? paths[l].mu : paths[l].nu;
      if (truth_match[l] >= 0) {
        const double est_value =
            (kind == TmseKind::mu) ? est.mu(truth_match[l]) : est.nu(truth_match[l]);
        out.total += (est_value - truth_value) * (est_value - truth_value);
        ++matched;
      } else {
        out.total += truth_value * truth_value;
        out.miss_penalty += truth_value * truth_value;
        ++out.missed;
      }
    }
    out.extra += std::max(0, n_est - matched);
  }
  (void)n_rx;
  return out;
}

TcrbResult tcrb(const PairPathTable& truth, double sigma2, const WaveformConfig& cfg,
                const SensingPlan& plan) {
  if (sigma2 <= 0.0) throw std::invalid_argument("noise variance must be positive");
  const int Q = cfg.Q();
  const int M = cfg.M;
  TcrbResult out;

  const auto model_signal = [&](const std::vector<PathParams>& paths,
                                const std::vector<ResponseSets>& sets,
                                const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& nu) {
    Eigen::VectorXcd s = Eigen::VectorXcd::Zero(static_cast<long>(Q) * M);
    for (size_t l = 0; l < paths.size(); ++l) {
      const Eigen::VectorXcd b = response_vector_with_sets(sets[l], mu(l), cfg);
      for (int m = 0; m < M; ++m)
        s.segment(static_cast<long>(m) * Q, Q) +=
            paths[l].amplitude * std::polar(1.0, -kTwoPi * nu(l) * m) * b;
    }
    return s;
  };

  for (int n = 0; n < plan.count(); ++n) {
    for (size_t j = 0; j < truth[n].size(); ++j) {
      const std::vector<PathParams>& paths = truth[n][j];
      const int L = static_cast<int>(paths.size());
      if (L == 0) continue;

      std::vector<ResponseSets> sets;
      Eigen::VectorXd mu(L), nu(L);
      for (int l = 0; l < L; ++l) {
        mu(l) = paths[l].mu;
        nu(l) = paths[l].nu;
        sets.push_back(response_sets(plan.subcarriers[n], cfg.to_tau(paths[l].mu), cfg));
      }

      // Real parameters per path: mu, nu, Re(amplitude), Im(amplitude).
      const int dims = 4 * L;
      Eigen::MatrixXcd jac(static_cast<long>(Q) * M, dims);
      const double step = 1e-7;
      for (int l = 0; l < L; ++l) {
        Eigen::VectorXd mu_hi = mu, mu_lo = mu;
        mu_hi(l) += step;
        mu_lo(l) -= step;
        jac.col(4 * l) =
            (model_signal(paths, sets, mu_hi, nu) - model_signal(paths, sets, mu_lo, nu)) /
            (2.0 * step);
        Eigen::VectorXd nu_hi = nu, nu_lo = nu;
        nu_hi(l) += step;
        nu_lo(l) -= step;
        jac.col(4 * l + 1) =
            (model_signal(paths, sets, mu, nu_hi) - model_signal(paths, sets, mu, nu_lo)) /
            (2.0 * step);
        // Analytic amplitude columns: the atom itself and j times it.
        const Eigen::VectorXcd b = response_vector_with_sets(sets[l], mu(l), cfg);
        Eigen::VectorXcd atom(static_cast<long>(Q) * M);
        for (int m = 0; m < M; ++m)
          atom.segment(static_cast<long>(m) * Q, Q) = std::polar(1.0, -kTwoPi * nu(l) * m) * b;
        jac.col(4 * l + 2) = atom;
        jac.col(4 * l + 3) = Complex(0.0, 1.0) * atom;
      }

      const Eigen::MatrixXd fim = 2.0 / sigma2 * (jac.adjoint() * jac).real();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(fim);
      if (!lu.isInvertible()) {
        ++out.singular_pairs;
        continue;
      }
      const Eigen::MatrixXd inv = lu.inverse();
      for (int l = 0; l < L; ++l) {
        out.total.mu += inv(4 * l, 4 * l);
        out.total.nu += inv(4 * l + 1, 4 * l + 1);
      }
    }
  }
  return out;
}

TargetMse mse_targets(const std::vector<TargetEstimate>& estimates,
                      const std::vector<Target>& truth) {
  TargetMse out;
  const int n_true = static_cast<int>(truth.size());
  const int n_est = static_cast<int>(estimates.size());
  if (n_true == 0) return out;
  if (n_est == 0) {
    out.missed = n_true;
    return out;
  }

  std::vector<int> truth_match(n_true, -1);
  if (n_true <= n_est) {
    Eigen::MatrixXd cost(n_true, n_est);
    for (int l = 0; l < n_true; ++l)
      for (int e = 0; e < n_est; ++e)
        cost(l, e) = (estimates[e].position - truth[l].position).squaredNorm();
    truth_match = min_cost_assignment(cost);
  } else {
    Eigen::MatrixXd cost(n_est, n_true);
    for (int e = 0; e < n_est; ++e)
      for (int l = 0; l < n_true; ++l)
        cost(e, l) = (estimates[e].position - truth[l].position).squaredNorm();
    const std::vector<int> est_match = min_cost_assignment(cost);
    for (int e = 0; e < n_est; ++e) truth_match[est_match[e]] = e;
  }

  for (int l = 0; l < n_true; ++l) {
    if (truth_match[l] < 0) {
      ++out.missed;
      continue;
    }
    const TargetEstimate& est = estimates[truth_match[l]];
    out.position += (est.position - truth[l].position).squaredNorm();
    out.velocity += (est.velocity - truth[l].velocity).squaredNorm();
  }
  return out;
}

double nmse(const std::vector<Eigen::VectorXcd>& estimate,
            const std::vector<Eigen::VectorXcd>& truth) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("length mismatch");
  double err = 0.0, energy = 0.0;
  for (size_t g = 0; g < truth.size(); ++g) {
    err += (estimate[g] - truth[g]).squaredNorm();
    energy += truth[g].squaredNorm();
  }
  if (energy <= 0.0) throw std::invalid_argument("zero-energy truth");
  return err / energy;
}

double clamped_db(double linear) {
  if (linear <= 1e-12) return -120.0;
  return std::max(-120.0, db_from_linear(linear));
}

}  // namespace isac
