#include "isac/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "isac/csv.hpp"
#include "isac/rng.hpp"

namespace isac {

std::pair<double, double> to_physical(double mu, double nu, const WaveformConfig& cfg) {
  const double range = kSpeedOfLight * cfg.f_ADC * cfg.T() / cfg.B * mu;
  const double rate = cfg.lambda() / cfg.symbol_period() * nu;
  return {range, rate};
}

std::vector<BistaticMeasurement> collect_measurements(const std::vector<PairEstimate>& estimates,
                                                      const SensingPlan& plan,
                                                      const ArrayGeometry& geometry,
                                                      const WaveformConfig& cfg) {
  std::vector<BistaticMeasurement> out;
  for (const PairEstimate& est : estimates) {
    for (int l = 0; l < est.path_count(); ++l) {
      BistaticMeasurement m;
      std::tie(m.range, m.range_rate) = to_physical(est.mu(l), est.nu(l), cfg);
      m.tx_index = est.n;
      m.rx_index = est.j;
      m.tx_pos = geometry.tx_positions.at(plan.tx_antennas.at(est.n));
      m.rx_pos = geometry.rx_positions.at(est.j);
      out.push_back(m);
    }
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (hi + v[mid - 1]);
}

// Median absolute deviation scaled for consistency with a normal sigma.
double mad_sigma(const std::vector<double>& v, double med) {
  std::vector<double> dev(v.size());
  for (size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
  return median(dev) / 0.6745;
}

}  // namespace

std::vector<BistaticMeasurement> eliminate_outliers(
    const std::vector<BistaticMeasurement>& measurements, double threshold) {
  const size_t count = measurements.size();
  if (count < 3) return measurements;

  std::vector<double> ranges(count), rates(count);
  for (size_t i = 0; i < count; ++i) {
    ranges[i] = measurements[i].range;
    rates[i] = measurements[i].range_rate;
  }
  const double med_range = median(ranges);
  const double med_rate = median(rates);
  const double s_range = mad_sigma(ranges, med_range);
  const double s_rate = mad_sigma(rates, med_rate);

  std::vector<double> score(count);
  for (size_t i = 0; i < count; ++i) {
    const double dr = ranges[i] - med_range;
    const double dv = rates[i] - med_rate;
    double z_r = 0.0, z_v = 0.0;
    if (s_range > 0.0)
      z_r = dr / s_range;
    else if (dr != 0.0)
      z_r = std::numeric_limits<double>::infinity();
    if (s_rate > 0.0)
      z_v = dv / s_rate;
    else if (dv != 0.0)
      z_v = std::numeric_limits<double>::infinity();
    score[i] = std::hypot(z_r, z_v);
  }

  std::vector<size_t> flagged;
  for (size_t i = 0; i < count; ++i)
    if (score[i] > threshold) flagged.push_back(i);
  const size_t max_removals = count / 2;
  if (flagged.size() > max_removals) {
    std::sort(flagged.begin(), flagged.end(),
              [&](size_t a, size_t b) { return score[a] > score[b]; });
    flagged.resize(max_removals);
  }

  std::vector<bool> drop(count, false);
  for (size_t i : flagged) drop[i] = true;
  std::vector<BistaticMeasurement> kept;
  kept.reserve(count - flagged.size());
  for (size_t i = 0; i < count; ++i)
    if (!drop[i]) kept.push_back(measurements[i]);
  return kept;
}

std::vector<std::vector<BistaticMeasurement>> cluster_measurements(
    const std::vector<BistaticMeasurement>& measurements, int cluster_count, uint64_t seed) {
  const int count = static_cast<int>(measurements.size());
  if (cluster_count < 1) throw std::invalid_argument("cluster count must be positive");
  if (count < cluster_count)
    throw std::invalid_argument("fewer measurements than requested clusters");

  // Standardize each axis by its MAD so metres and metres-per-second mix.
  std::vector<double> ranges(count), rates(count);
  for (int i = 0; i < count; ++i) {
    ranges[i] = measurements[i].range;
    rates[i] = measurements[i].range_rate;
  }
  double s_range = mad_sigma(ranges, median(ranges));
  double s_rate = mad_sigma(rates, median(rates));
  if (s_range <= 0.0) s_range = 1.0;
  if (s_rate <= 0.0) s_rate = 1.0;
  std::vector<Eigen::Vector2d> points(count);
  for (int i = 0; i < count; ++i)
    points[i] = Eigen::Vector2d(ranges[i] / s_range, rates[i] / s_rate);

  constexpr int kRestarts = 20;
  constexpr int kMaxIterations = 100;
  std::vector<int> best_assign(count, 0);
  double best_inertia = std::numeric_limits<double>::infinity();

  Rng rng = Rng::derive(seed, {0x6b6d65616e73ULL});
  for (int restart = 0; restart < kRestarts; ++restart) {
    // k-means++ seeding.
    std::vector<Eigen::Vector2d> centers;
    centers.push_back(points[rng.index(count)]);
    while (static_cast<int>(centers.size()) < cluster_count) {
      std::vector<double> d2(count);
      double total = 0.0;
      for (int i = 0; i < count; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) nearest = std::min(nearest, (points[i] - c).squaredNorm());
        d2[i] = nearest;
        total += nearest;
      }
      if (total <= 0.0) {
        centers.push_back(points[rng.index(count)]);
        continue;
      }
      double pick = rng.uniform() * total;
      int chosen = count - 1;
      for (int i = 0; i < count; ++i) {
        pick -= d2[i];
        if (pick <= 0.0) {
          chosen = i;
          break;
        }
      }
      centers.push_back(points[chosen]);
    }

    std::vector<int> assign(count, -1);
    for (int iter = 0; iter < kMaxIterations; ++iter) {
      bool changed = false;
      for (int i = 0; i < count; ++i) {
        int nearest = 0;
        double nearest_d2 = (points[i] - centers[0]).squaredNorm();
        for (int c = 1; c < cluster_count; ++c) {
          const double d2 = (points[i] - centers[c]).squaredNorm();
          if (d2 < nearest_d2) {
            nearest_d2 = d2;
            nearest = c;
          }
        }
        if (assign[i] != nearest) {
          assign[i] = nearest;
          changed = true;
        }
      }
      std::vector<Eigen::Vector2d> sums(cluster_count, Eigen::Vector2d::Zero());
      std::vector<int> sizes(cluster_count, 0);
      for (int i = 0; i < count; ++i) {
        sums[assign[i]] += points[i];
        sizes[assign[i]] += 1;
      }
      for (int c = 0; c < cluster_count; ++c) {
        if (sizes[c] == 0) {
          // Re-seed an empty cluster on the point farthest from its center.
          int far = 0;
          double far_d2 = -1.0;
          for (int i = 0; i < count; ++i) {
            const double d2 = (points[i] - centers[assign[i]]).squaredNorm();
            if (d2 > far_d2) {
              far_d2 = d2;
              far = i;
            }
          }
          centers[c] = points[far];
          changed = true;
        } else {
          centers[c] = sums[c] / sizes[c];
        }
      }
      if (!changed) break;
    }

    double inertia = 0.0;
    for (int i = 0; i < count; ++i) inertia += (points[i] - centers[assign[i]]).squaredNorm();
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assign = assign;
    }
  }

  std::vector<std::vector<BistaticMeasurement>> clusters(cluster_count);
  for (int i = 0; i < count; ++i) clusters[best_assign[i]].push_back(measurements[i]);
  return clusters;
}

ClosedFormPosition closed_form_position(const Vec3& common_pos,
                                        const std::vector<Vec3>& other_pos,
                                        const Eigen::VectorXd& ranges) {
  const int count = static_cast<int>(other_pos.size());
  if (count < 3 || ranges.size() != count)
    throw std::invalid_argument("need at least 3 ranges with matching antenna positions");

  Eigen::MatrixXd w(count, 3);
  Eigen::VectorXd c(count);
  for (int p = 0; p < count; ++p) {
    const Vec3 delta = common_pos - other_pos[p];
    w(p, 0) = 2.0 * delta.x();
    w(p, 1) = 2.0 * delta.y();
    w(p, 2) = 2.0 * ranges(p);
    c(p) = ranges(p) * ranges(p) + common_pos.squaredNorm() - other_pos[p].squaredNorm();
  }
  auto cod = w.completeOrthogonalDecomposition();
  cod.setThreshold(1e-10);
  if (cod.rank() < 3) throw std::runtime_error("degenerate antenna geometry: rank below 3");
  const Eigen::Vector3d theta = cod.solve(c);

  ClosedFormPosition out;
  const double dx = theta(0) - common_pos.x();
  const double dy = theta(1) - common_pos.y();
  double z2 = theta(2) * theta(2) - dx * dx - dy * dy;
  if (z2 < 0.0) {
    z2 = 0.0;
    out.clamped = true;
  }
  out.position = Vec3(theta(0), theta(1), std::sqrt(z2));
  return out;
}

double position_objective(const Vec3& p, const std::vector<BistaticMeasurement>& cluster) {
  double g = 0.0;
  for (const BistaticMeasurement& m : cluster) {
    const double r = m.range - (p - m.tx_pos).norm() - (p - m.rx_pos).norm();
    g += r * r;
  }
  return g;
}

Vec3 position_gradient(const Vec3& p, const std::vector<BistaticMeasurement>& cluster) {
  Vec3 g = Vec3::Zero();
  for (const BistaticMeasurement& m : cluster) {
    const Vec3 d_tx = p - m.tx_pos;
    const Vec3 d_rx = p - m.rx_pos;
    const double n_tx = d_tx.norm();
    const double n_rx = d_rx.norm();
    const double r = m.range - n_tx - n_rx;
    g += -2.0 * r * (d_tx / n_tx + d_rx / n_rx);
  }
  return g;
}

namespace {

Vec3 nudge_off_antennas(Vec3 p, const std::vector<BistaticMeasurement>& cluster) {
  for (const BistaticMeasurement& m : cluster) {
    if ((p - m.tx_pos).norm() < 1e-12 || (p - m.rx_pos).norm() < 1e-12) {
      p += Vec3(1e-9, 1e-9, 1e-9);
      break;
    }
  }
  return p;
}

}  // namespace

Vec3 position_gda(const Vec3& init, const std::vector<BistaticMeasurement>& cluster,
                  int max_iterations) {
  if (cluster.empty()) throw std::invalid_argument("empty cluster");
  Vec3 p = nudge_off_antennas(init, cluster);
  if (p.z() < 0.0) p.z() = -p.z();

  Vec3 best_p = p;
  double best_g = position_objective(p, cluster);

  Vec3 prev_p = Vec3::Zero(), prev_grad = Vec3::Zero();
  bool has_prev = false;
  for (int h = 1; h <= max_iterations; ++h) {
    const Vec3 grad = position_gradient(p, cluster);
    double beta;
    if (!has_prev) {
      // Exact line search along -grad on the Gauss-Newton model.
      double num = 0.0, denom = 0.0;
      for (const BistaticMeasurement& m : cluster) {
        const Vec3 y = (p - m.tx_pos).normalized() + (p - m.rx_pos).normalized();
        const double jd = y.dot(-grad);
        denom += jd * jd;
      }
      num = 0.5 * grad.squaredNorm();
      beta = denom > 0.0 ? num / denom : 1e-6;
    } else {
      const Vec3 s = p - prev_p;
      const Vec3 y = grad - prev_grad;
      const double sy = s.dot(y);
      const double yy = y.dot(y);
      beta = (sy > 0.0 && yy > 0.0) ? sy / yy : 1e-9;
    }
    prev_p = p;
    prev_grad = grad;
    has_prev = true;

    p = nudge_off_antennas(p - beta * grad, cluster);
    if (p.z() < 0.0) p.z() = -p.z();  // reflect back above the array plane

    const double g = position_objective(p, cluster);
    if (g < best_g) {
      best_g = g;
      best_p = p;
    }
  }
  return best_p;
}

VelocityFit velocity_ls(const Vec3& position, const std::vector<BistaticMeasurement>& cluster) {
  VelocityFit fit;
  const int count = static_cast<int>(cluster.size());
  if (count < 3) return fit;
  Eigen::MatrixXd y(count, 3);
  Eigen::VectorXd s(count);
  for (int p = 0; p < count; ++p) {
    const Vec3 row = (position - cluster[p].tx_pos).normalized() +
                     (position - cluster[p].rx_pos).normalized();
    y.row(p) = row.transpose();
    s(p) = cluster[p].range_rate;
  }
  auto cod = y.completeOrthogonalDecomposition();
  cod.setThreshold(1e-10);
  if (cod.rank() < 3) return fit;
  fit.velocity = cod.solve(s);
  fit.ok = true;
  return fit;
}

namespace {

// Initial position for clusters lacking a 3-measurement common-antenna
// subset: per measurement, place a guess at the prolate-spheroid apex above
// the antenna midpoint, then average and pin the height to the median guess.
Vec3 centroid_initializer(const std::vector<BistaticMeasurement>& cluster) {
  Vec3 sum = Vec3::Zero();
  std::vector<double> heights;
  for (const BistaticMeasurement& m : cluster) {
    const Vec3 mid = 0.5 * (m.tx_pos + m.rx_pos);
    const double half_base = 0.5 * (m.tx_pos - m.rx_pos).norm();
    const double half_range = 0.5 * std::max(m.range, 2.0 * half_base);
    const double h = std::sqrt(std::max(0.0, half_range * half_range - half_base * half_base));
    sum += Vec3(mid.x(), mid.y(), 0.0);
    heights.push_back(h);
  }
  Vec3 init = sum / static_cast<double>(cluster.size());
  init.z() = median(heights);
  if (init.z() <= 0.0) init.z() = 1.0;
  return init;
}

}  // namespace

std::vector<TargetEstimate> fuse_targets(const std::vector<PairEstimate>& estimates,
                                         const SensingPlan& plan, const ArrayGeometry& geometry,
                                         const WaveformConfig& cfg, uint64_t seed,
                                         const FusionOptions& options) {
  int cluster_count = options.cluster_count;
  if (cluster_count < 0) {
    cluster_count = 0;
    for (const PairEstimate& e : estimates)
      cluster_count = std::max(cluster_count, e.path_count());
  }
  std::vector<TargetEstimate> out;
  if (cluster_count == 0) return out;

  std::vector<BistaticMeasurement> all = collect_measurements(estimates, plan, geometry, cfg);
  all = eliminate_outliers(all, options.outlier_threshold);
  if (static_cast<int>(all.size()) < cluster_count) return out;
  const auto clusters = cluster_measurements(all, cluster_count, seed);

  for (int c = 0; c < cluster_count; ++c) {
    const auto& cluster = clusters[c];
    if (cluster.empty()) continue;

    // Largest group sharing a transmit antenna, then the Rx fallback.
    auto largest_group = [&cluster](bool by_tx) {
      std::map<int, std::vector<int>> groups;
      for (size_t i = 0; i < cluster.size(); ++i)
        groups[by_tx ? cluster[i].tx_index : cluster[i].rx_index].push_back(
            static_cast<int>(i));
      std::vector<int> best;
      for (const auto& [key, members] : groups)
        if (members.size() > best.size()) best = members;
      return best;
    };

    TargetEstimate target;
    target.cluster = c;
    Vec3 init;
    std::vector<int> group = largest_group(true);
    bool common_is_tx = true;
    if (group.size() < 3) {
      group = largest_group(false);
      common_is_tx = false;
    }
    if (group.size() >= 3) {
      const Vec3 common = common_is_tx ? cluster[group[0]].tx_pos : cluster[group[0]].rx_pos;
      std::vector<Vec3> others;
      Eigen::VectorXd ranges(static_cast<long>(group.size()));
      for (size_t i = 0; i < group.size(); ++i) {
        const BistaticMeasurement& m = cluster[group[i]];
        others.push_back(common_is_tx ? m.rx_pos : m.tx_pos);
        ranges(static_cast<long>(i)) = m.range;
      }
      try {
        init = closed_form_position(common, others, ranges).position;
      } catch (const std::runtime_error&) {
        init = centroid_initializer(cluster);
        target.closed_form_init = false;
      }
    } else {
      init = centroid_initializer(cluster);
      target.closed_form_init = false;
    }
    if (init.z() <= 0.0) init.z() = 1e-3;

    target.position = position_gda(init, cluster, options.gda_iterations);
    const VelocityFit vel = velocity_ls(target.position, cluster);
    target.velocity = vel.velocity;
    target.velocity_ok = vel.ok;
    out.push_back(target);
  }
  return out;
}

std::string target_estimates_csv(const std::vector<TargetEstimate>& targets) {
  CsvWriter csv({"cluster", "x", "y", "z", "vx", "vy", "vz", "flags"});
  for (const TargetEstimate& t : targets) {
    std::string flags;
    if (!t.closed_form_init) flags += "no_closed_form;";
    if (!t.velocity_ok) flags += "velocity_rank_deficient;";
    csv.add_row({std::to_string(t.cluster), format_double(t.position.x()),
                 format_double(t.position.y()), format_double(t.position.z()),
                 format_double(t.velocity.x()), format_double(t.velocity.y()),
                 format_double(t.velocity.z()), flags});
  }
  return csv.str();
}

}  // namespace isac
