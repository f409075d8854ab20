// metrics.hpp - estimation-error metrics and numeric Cramer-Rao bounds
#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isac/dechirp.hpp"
#include "isac/fusion.hpp"
#include "isac/pair_estimation.hpp"
#include "isac/types.hpp"

namespace isac {

struct MetricReport {
  std::string name;
  double value = 0.0;  // as reported (dB or linear)
  long trials = 0;
  double ci_half_width = 0.0;
};

// Minimum-cost assignment of rows to columns (square or rows <= cols);
// exhaustive for up to 8 rows, greedy beyond. Returns the column matched to
// each row.
std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost);

enum class TmseKind { mu, nu };

struct TmseBreakdown {
  double total = 0.0;    // summed squared errors over all pairs
  int missed = 0;        // truth paths with no matching estimate
  int extra = 0;         // estimated paths with no matching truth
  double miss_penalty = 0.0;  // part of total contributed by misses
};

// Summed squared (mu or nu) error over all pairs of one trial, with
// per-pair estimate/truth association by joint minimum-cost matching on
// (delta mu)^2 + (delta nu)^2. Missed truth paths are penalized by the truth
// parameter's squared magnitude.
TmseBreakdown tmse(const std::vector<PairEstimate>& estimates, const PairPathTable& truth,
                   int n_rx, TmseKind kind);

struct TcrbValue {
  double mu = 0.0;
  double nu = 0.0;
};

// Total Cramer-Rao bounds, summed per-pair over the trace of the mu (nu)
// block of the inverse Fisher information. The Fisher information of the
// Gaussian measurement model is built from a Jacobian with central
// differences in (mu, nu) (window sets held fixed) and analytic amplitude
// columns. Pairs whose information matrix is singular are flagged.
struct TcrbResult {
  TcrbValue total;
  int singular_pairs = 0;
};

TcrbResult tcrb(const PairPathTable& truth, double sigma2, const WaveformConfig& cfg,
                const SensingPlan& plan);

// Position/velocity MSE of one trial with minimum-cost association on squared
// position error; cardinality mismatches are reported as misses.
struct TargetMse {
  double position = 0.0;  // sum over matched targets of squared position error [m^2]
  double velocity = 0.0;  // [m^2/s^2]
  int missed = 0;
};

TargetMse mse_targets(const std::vector<TargetEstimate>& estimates,
                      const std::vector<Target>& truth);

// Channel-estimation normalized MSE of one trial: ratio of summed squared
// errors to summed true energy over the frequency-domain vectors.
double nmse(const std::vector<Eigen::VectorXcd>& estimate,
            const std::vector<Eigen::VectorXcd>& truth);

// dB with a reporting floor of -120 dB.
double clamped_db(double linear);

}  // namespace isac
