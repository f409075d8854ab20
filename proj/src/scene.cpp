#include "isac/scene.hpp"

#include <cmath>
#include <stdexcept>

namespace isac {

ArrayGeometry ArrayGeometry::standard(int n_tx, int n_rx, double lambda, double d_rx) {
  if (n_tx < 1 || n_rx < 1) throw std::invalid_argument("antenna counts must be positive");
  ArrayGeometry g;
  g.tx_positions.reserve(n_tx);
  for (int i = 0; i < n_tx; ++i)
    g.tx_positions.push_back(Vec3(i * lambda / 2.0, 0.0, 0.0));
  g.rx_positions.reserve(n_rx);
  if (n_rx == 4) {
    const double h = d_rx / 2.0;
    g.rx_positions = {Vec3(h, h, 0.0), Vec3(h, -h, 0.0), Vec3(-h, h, 0.0), Vec3(-h, -h, 0.0)};
  } else {
    const double r = d_rx / std::sqrt(2.0);
    for (int j = 0; j < n_rx; ++j) {
      const double a = kTwoPi * j / n_rx;
      g.rx_positions.push_back(Vec3(r * std::cos(a), r * std::sin(a), 0.0));
    }
  }
  return g;
}

void ArrayGeometry::validate() const {
  for (const Vec3& p : tx_positions)
    if (p.z() != 0.0) throw std::invalid_argument("Tx antennas must lie on the z = 0 plane");
  for (const Vec3& p : rx_positions)
    if (p.z() != 0.0) throw std::invalid_argument("Rx antennas must lie on the z = 0 plane");
}

GainTensor draw_gains(const GainModel& model, int targets, int n_sensing, int n_rx, Rng& rng) {
  GainTensor alpha(n_sensing, Eigen::MatrixXcd(n_rx, targets));
  switch (model.kind) {
    case GainKind::correlated:
      for (int l = 0; l < targets; ++l) {
        const Complex a = rng.cgaussian(1.0);
        for (int n = 0; n < n_sensing; ++n)
          for (int j = 0; j < n_rx; ++j) alpha[n](j, l) = a;
      }
      break;
    case GainKind::suc:
    case GainKind::sns:
      for (int n = 0; n < n_sensing; ++n)
        for (int j = 0; j < n_rx; ++j)
          for (int l = 0; l < targets; ++l) alpha[n](j, l) = rng.cgaussian(1.0);
      break;
  }
  if (model.kind == GainKind::sns) {
    const int total = n_sensing * targets;
    if (model.n_null > total)
      throw std::invalid_argument("cannot null more Tx-target paths than exist");
    // Choose n_null distinct (n, l) pairs; nulling is shared across all Rx.
    std::vector<int> pool(total);
    for (int i = 0; i < total; ++i) pool[i] = i;
    for (int pick = 0; pick < model.n_null; ++pick) {
      const size_t idx = rng.index(pool.size());
      const int flat = pool[idx];
      pool.erase(pool.begin() + static_cast<long>(idx));
      const int n = flat / targets;
      const int l = flat % targets;
      for (int j = 0; j < n_rx; ++j) alpha[n](j, l) = Complex(0.0, 0.0);
    }
  }
  return alpha;
}

namespace {

void require_separated(const Vec3& target, const Vec3& antenna) {
  if ((target - antenna).norm() <= 0.0)
    throw std::invalid_argument("target coincides with an antenna");
}

}  // namespace

double bistatic_delay(const Vec3& target, const Vec3& tx, const Vec3& rx) {
  if (!target.allFinite() || !tx.allFinite() || !rx.allFinite())
    throw std::invalid_argument("non-finite coordinates");
  require_separated(target, tx);
  require_separated(target, rx);
  return ((target - tx).norm() + (target - rx).norm()) / kSpeedOfLight;
}

double bistatic_range_rate(const Vec3& target, const Vec3& velocity, const Vec3& tx,
                           const Vec3& rx) {
  require_separated(target, tx);
  require_separated(target, rx);
  const Vec3 u_tx = (target - tx).normalized();
  const Vec3 u_rx = (target - rx).normalized();
  return (u_tx + u_rx).dot(velocity);
}

Eigen::VectorXcd near_field_steering(const Vec3& point, const std::vector<Vec3>& tx_positions,
                                     double f_c) {
  const int n = static_cast<int>(tx_positions.size());
  Eigen::VectorXcd a(n);
  const double ref = point.norm();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    const double d = (point - tx_positions[i]).norm();
    if (d <= 0.0) throw std::invalid_argument("steering point coincides with an antenna");
    a(i) = scale * std::polar(1.0, -kTwoPi * f_c * (d - ref) / kSpeedOfLight);
  }
  return a;
}

double max_bistatic_delay(const Scene& scene, const ArrayGeometry& geometry) {
  double worst = 0.0;
  for (const Target& t : scene.targets)
    for (const Vec3& tx : geometry.tx_positions)
      for (const Vec3& rx : geometry.rx_positions)
        worst = std::max(worst, bistatic_delay(t.position, tx, rx));
  return worst;
}

namespace {

Target draw_target(const SceneDistribution& dist, Rng& rng) {
  const double r = rng.uniform(dist.r_min, dist.r_max);
  const double theta = rng.uniform(dist.theta_min, dist.theta_max);
  const double phi = rng.uniform(dist.phi_min, dist.phi_max);
  Target t;
  t.position = Vec3(r * std::sin(theta) * std::cos(phi), r * std::sin(theta) * std::sin(phi),
                    r * std::cos(theta));
  t.velocity = Vec3(rng.uniform(0.0, dist.speed_component_max),
                    rng.uniform(0.0, dist.speed_component_max),
                    rng.uniform(0.0, dist.speed_component_max));
  return t;
}

}  // namespace

Scene draw_scene(const SceneDistribution& dist, int targets, const ArrayGeometry& geometry,
                 const WaveformConfig& cfg, Rng& rng, int max_attempts) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Scene scene;
    scene.targets.reserve(targets);
    for (int l = 0; l < targets; ++l) scene.targets.push_back(draw_target(dist, rng));
    bool ok = true;
    for (const Target& t : scene.targets) {
      if (t.position.z() <= 0.0) ok = false;
    }
    if (ok && max_bistatic_delay(scene, geometry) < cfg.T_GI) return scene;
  }
  throw std::runtime_error("could not draw a scene whose delays fit the guard interval");
}

double comm_path_delay(const Vec3& scatterer, const Vec3& ut) {
  return (scatterer.norm() + (scatterer - ut).norm()) / kSpeedOfLight;
}

CommScene draw_comm_scene(const SceneDistribution& dist, int scatterers, int l_common,
                          const Scene& sensing_scene, const Vec3& ut_position,
                          const ArrayGeometry& geometry, const WaveformConfig& cfg, int G,
                          Rng& rng, int max_attempts) {
  (void)geometry;
  if (l_common > std::min(scatterers, sensing_scene.target_count()))
    throw std::invalid_argument("l_common exceeds available scatterers or sensing targets");
  const double max_delay = static_cast<double>(G) / cfg.B;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    CommScene scene;
    scene.ut_position = ut_position;
    scene.l_common = l_common;
    for (int l = 0; l < l_common; ++l)
      scene.scatterer_positions.push_back(sensing_scene.targets[l].position);
    for (int l = l_common; l < scatterers; ++l)
      scene.scatterer_positions.push_back(draw_target(dist, rng).position);
    scene.gains.resize(scatterers);
    for (int l = 0; l < scatterers; ++l) scene.gains(l) = rng.cgaussian(1.0);
    bool ok = true;
    for (const Vec3& p : scene.scatterer_positions)
      if (comm_path_delay(p, ut_position) >= max_delay) ok = false;
    if (ok) return scene;
  }
  throw std::runtime_error("could not draw a communication scene within the cyclic prefix span");
}

std::vector<Eigen::VectorXcd> comm_cir_taps(const CommScene& scene,
                                            const ArrayGeometry& geometry,
                                            const WaveformConfig& cfg, int G) {
  const double t_s = 1.0 / cfg.B;
  const int n_tx = geometry.n_tx();
  for (const Vec3& p : scene.scatterer_positions) {
    if (comm_path_delay(p, scene.ut_position) >= G * t_s)
      throw std::invalid_argument("scatterer delay exceeds the cyclic prefix span");
  }
  std::vector<Eigen::VectorXcd> taps(G, Eigen::VectorXcd::Zero(n_tx));
  for (int l = 0; l < scene.scatterer_count(); ++l) {
    const Eigen::VectorXcd a =
        near_field_steering(scene.scatterer_positions[l], geometry.tx_positions, cfg.f_c);
    const double tau = comm_path_delay(scene.scatterer_positions[l], scene.ut_position);
    for (int g = 0; g < G; ++g) {
      const double x = cfg.B * (g * t_s - tau);
      const double psf = (x == 0.0) ? 1.0 : std::sin(kPi * x) / (kPi * x);
      if (psf != 0.0) taps[g] += scene.gains(l) * psf * a;
    }
  }
  return taps;
}

std::vector<Eigen::VectorXcd> comm_channel_fd(const std::vector<Eigen::VectorXcd>& taps) {
  const int G = static_cast<int>(taps.size());
  if (G == 0) return {};
  const long n = taps[0].size();
  std::vector<Eigen::VectorXcd> fd(G, Eigen::VectorXcd::Zero(n));
  const double scale = 1.0 / std::sqrt(static_cast<double>(G));
  for (int g = 0; g < G; ++g)
    for (int gp = 0; gp < G; ++gp)
      fd[g] += scale * std::polar(1.0, -kTwoPi * g * gp / G) * taps[gp];
  return fd;
}

}  // namespace isac
