#include "isac/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "isac/csv.hpp"
#include "isac/dechirp.hpp"
#include "isac/pair_estimation.hpp"
#include "isac/rng.hpp"

namespace isac {

namespace {

using nlohmann::json;

double get_num(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw std::runtime_error(std::string("field must be numeric: ") + key);
  return j[key].get<double>();
}

int get_int(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer())
    throw std::runtime_error(std::string("field must be an integer: ") + key);
  return j[key].get<int>();
}

bool get_bool(const json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) throw std::runtime_error(std::string("field must be boolean: ") + key);
  return j[key].get<bool>();
}

Vec3 get_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed)
      if (it.key() == key) ok = true;
    if (!ok) throw std::runtime_error("unknown field '" + it.key() + "' in section " + section);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw std::runtime_error(std::string("config parse error: ") + err.what());
  }
  check_keys(root, {"waveform", "geometry", "sensing", "scene", "comm", "experiment"}, "root");

  ExperimentConfig cfg;
  if (root.contains("waveform")) {
    const json& w = root["waveform"];
    check_keys(w, {"f_c", "K", "B", "M", "T_GI", "T_com", "f_LPF", "f_ADC", "P_Tx_dBm",
                   "P_Tx_com_dBm"},
               "waveform");
    cfg.waveform.f_c = get_num(w, "f_c", cfg.waveform.f_c);
    cfg.waveform.K = get_int(w, "K", cfg.waveform.K);
    cfg.waveform.B = get_num(w, "B", cfg.waveform.B);
    cfg.waveform.M = get_int(w, "M", cfg.waveform.M);
    cfg.waveform.T_GI = get_num(w, "T_GI", cfg.waveform.T_GI);
    cfg.waveform.T_com = get_num(w, "T_com", cfg.waveform.T_com);
    cfg.waveform.f_LPF = get_num(w, "f_LPF", cfg.waveform.f_LPF);
    cfg.waveform.f_ADC = get_num(w, "f_ADC", cfg.waveform.f_ADC);
    cfg.waveform.P_Tx = std::pow(10.0, get_num(w, "P_Tx_dBm", 50.0) / 10.0) * 1e-3;
    cfg.waveform.P_Tx_com = std::pow(10.0, get_num(w, "P_Tx_com_dBm", 50.0) / 10.0) * 1e-3;
  }
  if (root.contains("geometry")) {
    const json& g = root["geometry"];
    check_keys(g, {"N_Tx", "N_Rx", "D_Rx"}, "geometry");
    cfg.n_tx = get_int(g, "N_Tx", cfg.n_tx);
    cfg.n_rx = get_int(g, "N_Rx", cfg.n_rx);
    cfg.d_rx = get_num(g, "D_Rx", cfg.d_rx);
  }
  if (root.contains("sensing")) {
    const json& s = root["sensing"];
    check_keys(s, {"N", "L", "H_max", "H_prime_max", "channel", "N_null"}, "sensing");
    cfg.n_sensing = get_int(s, "N", cfg.n_sensing);
    cfg.targets = get_int(s, "L", cfg.targets);
    cfg.h_max = get_int(s, "H_max", cfg.h_max);
    cfg.h_prime_max = get_int(s, "H_prime_max", cfg.h_prime_max);
    cfg.channel.n_null = get_int(s, "N_null", cfg.channel.n_null);
    if (s.contains("channel")) {
      const std::string kind = s["channel"].get<std::string>();
      if (kind == "correlated")
        cfg.channel.kind = GainKind::correlated;
      else if (kind == "suc")
        cfg.channel.kind = GainKind::suc;
      else if (kind == "sns")
        cfg.channel.kind = GainKind::sns;
      else
        throw std::runtime_error("sensing.channel must be correlated, suc or sns");
    }
  }
  if (root.contains("scene")) {
    const json& s = root["scene"];
    check_keys(s, {"r_min", "r_max", "speed_kmh_max", "targets"}, "scene");
    cfg.scene_dist.r_min = get_num(s, "r_min", cfg.scene_dist.r_min);
    cfg.scene_dist.r_max = get_num(s, "r_max", cfg.scene_dist.r_max);
    cfg.scene_dist.speed_component_max =
        get_num(s, "speed_kmh_max", cfg.scene_dist.speed_component_max * 3.6) / 3.6;
    if (s.contains("targets")) {
      for (const json& t : s["targets"]) {
        check_keys(t, {"position", "velocity"}, "scene.targets");
        Target target;
        target.position = get_vec3(t.at("position"));
        target.velocity = t.contains("velocity") ? get_vec3(t["velocity"]) : Vec3::Zero();
        cfg.explicit_targets.push_back(target);
      }
    }
  }
  if (root.contains("comm")) {
    const json& c = root["comm"];
    check_keys(c, {"G", "N_CE", "epsilon", "L_com", "L_comm", "d_min", "d_max",
                   "angle_oversample", "ut_position", "sensing_for_ce"},
               "comm");
    cfg.cp_length = get_int(c, "G", cfg.cp_length);
    cfg.n_ce = get_int(c, "N_CE", cfg.n_ce);
    cfg.epsilon = get_num(c, "epsilon", cfg.epsilon);
    cfg.l_com = get_int(c, "L_com", cfg.l_com);
    cfg.l_comm = get_int(c, "L_comm", cfg.l_comm);
    cfg.dict_d_min = get_num(c, "d_min", cfg.dict_d_min);
    cfg.dict_d_max = get_num(c, "d_max", cfg.dict_d_max);
    cfg.angle_oversample = get_int(c, "angle_oversample", cfg.angle_oversample);
    if (c.contains("ut_position")) cfg.ut_position = get_vec3(c["ut_position"]);
    cfg.sensing_for_ce = get_bool(c, "sensing_for_ce", cfg.sensing_for_ce);
  }
  if (root.contains("experiment")) {
    const json& e = root["experiment"];
    check_keys(e, {"snr_db", "n_ce_grid", "trials", "seed", "threads", "noiseless", "ber_bits"},
               "experiment");
    if (e.contains("snr_db")) {
      if (!e["snr_db"].is_array() || e["snr_db"].empty())
        throw std::runtime_error("experiment.snr_db must be a nonempty array");
      cfg.snr_db.clear();
      for (const json& v : e["snr_db"]) {
        if (!v.is_number()) throw std::runtime_error("experiment.snr_db entries must be numeric");
        cfg.snr_db.push_back(v.get<double>());
      }
    }
    if (e.contains("n_ce_grid")) {
      cfg.n_ce_grid.clear();
      for (const json& v : e["n_ce_grid"]) cfg.n_ce_grid.push_back(v.get<int>());
    }
    cfg.trials = get_int(e, "trials", cfg.trials);
    if (e.contains("seed")) cfg.seed = e["seed"].get<uint64_t>();
    cfg.threads = get_int(e, "threads", cfg.threads);
    cfg.noiseless = get_bool(e, "noiseless", cfg.noiseless);
    if (e.contains("ber_bits")) cfg.ber_bits = e["ber_bits"].get<long>();
  }

  // Invariant checks, all collected.
  std::ostringstream bad;
  try {
    cfg.waveform.validate();
  } catch (const std::invalid_argument& err) {
    bad << err.what() << "; ";
  }
  if (cfg.trials < 1) bad << "experiment.trials must be at least 1; ";
  if (cfg.snr_db.empty()) bad << "experiment.snr_db must be nonempty; ";
  if (cfg.n_sensing < 1) bad << "sensing.N must be at least 1; ";
  if (cfg.n_sensing > cfg.n_tx) bad << "sensing.N cannot exceed geometry.N_Tx; ";
  if (cfg.l_comm > std::min(cfg.l_com, cfg.targets))
    bad << "comm.L_comm cannot exceed min(comm.L_com, sensing.L); ";
  const std::string msg = bad.str();
  if (!msg.empty()) throw std::runtime_error("invalid config: " + msg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void apply_desk_preset(ExperimentConfig& cfg) {
  cfg.n_tx = 128;
  cfg.trials = std::min(cfg.trials, 100);
  cfg.cp_length = 16;
  cfg.n_ce = std::min(cfg.n_ce, 64);
  if (cfg.n_ce_grid.empty()) cfg.n_ce_grid = {16, 32, 64};
  cfg.ber_bits = std::min(cfg.ber_bits, 1L << 18);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  json& w = root["waveform"];
  w["f_c"] = cfg.waveform.f_c;
  w["K"] = cfg.waveform.K;
  w["B"] = cfg.waveform.B;
  w["M"] = cfg.waveform.M;
  w["T_GI"] = cfg.waveform.T_GI;
  w["T_com"] = cfg.waveform.T_com;
  w["f_LPF"] = cfg.waveform.f_LPF;
  w["f_ADC"] = cfg.waveform.f_ADC;
  w["P_Tx_dBm"] = 10.0 * std::log10(cfg.waveform.P_Tx * 1e3);
  w["P_Tx_com_dBm"] = 10.0 * std::log10(cfg.waveform.P_Tx_com * 1e3);
  json& g = root["geometry"];
  g["N_Tx"] = cfg.n_tx;
  g["N_Rx"] = cfg.n_rx;
  g["D_Rx"] = cfg.d_rx;
  json& s = root["sensing"];
  s["N"] = cfg.n_sensing;
  s["L"] = cfg.targets;
  s["H_max"] = cfg.h_max;
  s["H_prime_max"] = cfg.h_prime_max;
  s["channel"] = cfg.channel.kind == GainKind::correlated
                     ? "correlated"
                     : (cfg.channel.kind == GainKind::suc ? "suc" : "sns");
  s["N_null"] = cfg.channel.n_null;
  json& sc = root["scene"];
  sc["r_min"] = cfg.scene_dist.r_min;
  sc["r_max"] = cfg.scene_dist.r_max;
  sc["speed_kmh_max"] = cfg.scene_dist.speed_component_max * 3.6;
  sc["targets"] = json::array();
  for (const Target& t : cfg.explicit_targets) {
    json jt;
    jt["position"] = {t.position.x(), t.position.y(), t.position.z()};
    jt["velocity"] = {t.velocity.x(), t.velocity.y(), t.velocity.z()};
    sc["targets"].push_back(jt);
  }
  json& c = root["comm"];
  c["G"] = cfg.cp_length;
  c["N_CE"] = cfg.n_ce;
  c["epsilon"] = cfg.epsilon;
  c["L_com"] = cfg.l_com;
  c["L_comm"] = cfg.l_comm;
  c["d_min"] = cfg.dict_d_min;
  c["d_max"] = cfg.dict_d_max;
  c["angle_oversample"] = cfg.angle_oversample;
  c["ut_position"] = {cfg.ut_position.x(), cfg.ut_position.y(), cfg.ut_position.z()};
  c["sensing_for_ce"] = cfg.sensing_for_ce;
  json& e = root["experiment"];
  e["snr_db"] = cfg.snr_db;
  e["n_ce_grid"] = cfg.n_ce_grid;
  e["trials"] = cfg.trials;
  e["seed"] = cfg.seed;
  e["threads"] = cfg.threads;
  e["noiseless"] = cfg.noiseless;
  e["ber_bits"] = cfg.ber_bits;
  return root.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

Suite suite_from_name(const std::string& name) {
  if (name == "sensing_tmse") return Suite::sensing_tmse;
  if (name == "vibs_mse") return Suite::vibs_mse;
  if (name == "comm_nmse") return Suite::comm_nmse;
  if (name == "ber") return Suite::ber;
  throw std::runtime_error("unknown suite: " + name +
                           " (expected sensing_tmse, vibs_mse, comm_nmse or ber)");
}

std::string suite_name(Suite suite) {
  switch (suite) {
    case Suite::sensing_tmse: return "sensing_tmse";
    case Suite::vibs_mse: return "vibs_mse";
    case Suite::comm_nmse: return "comm_nmse";
    case Suite::ber: return "ber";
  }
  return "?";
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next(0);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

namespace {

struct RunSetup {
  ArrayGeometry geometry;
  SensingPlan plan;
};

RunSetup make_setup(const ExperimentConfig& cfg) {
  RunSetup setup;
  setup.geometry =
      ArrayGeometry::standard(cfg.n_tx, cfg.n_rx, cfg.waveform.lambda(), cfg.d_rx);
  setup.plan = select_subcarriers(cfg.waveform, cfg.n_sensing, cfg.seed, cfg.n_tx);
  return setup;
}

Scene trial_scene(const ExperimentConfig& cfg, const RunSetup& setup, Rng& rng) {
  if (!cfg.explicit_targets.empty()) {
    Scene scene;
    scene.targets = cfg.explicit_targets;
    return scene;
  }
  return draw_scene(cfg.scene_dist, cfg.targets, setup.geometry, cfg.waveform, rng);
}

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;
};

MeanCi mean_ci(const std::vector<double>& values) {
  MeanCi out;
  const size_t n = values.size();
  if (n == 0) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (n > 1) {
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    var /= (n - 1);
    out.ci = 1.96 * std::sqrt(var / n);
  }
  return out;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
}

constexpr uint64_t kSceneKey = 1, kGainKey = 2, kNoiseKey = 3, kFuseKey = 4, kCommKey = 5,
                   kPilotRxKey = 6, kBerKey = 7;

std::vector<PairEstimate> run_pair_estimation(const MeasurementCube& cube, int h_max) {
  PairEstimationOptions options;
  options.h_max = h_max;
  return estimate_all_pairs(cube, options);
}

}  // namespace

std::vector<std::string> run_experiment(const ExperimentConfig& cfg, Suite suite,
                                        const std::string& out_dir, bool quiet) {
  std::filesystem::create_directories(out_dir);
  const RunSetup setup = make_setup(cfg);
  const std::string hash = config_hash(cfg);
  const uint64_t suite_key = static_cast<uint64_t>(suite) + 0x100;

  if (!quiet) {
    auto [d_min, d_max] = subcarrier_spacing_bounds(cfg.waveform);
    std::cout << "suite=" << suite_name(suite) << " hash=" << hash << " Q=" << cfg.waveform.Q()
              << " spacing=[" << d_min << "," << d_max << "] subcarriers={";
    for (int i = 0; i < setup.plan.count(); ++i)
      std::cout << (i ? "," : "") << setup.plan.subcarriers[i];
    std::cout << "} trials=" << cfg.trials << " seed=" << cfg.seed << "\n";
  }

  std::vector<std::string> written;

  if (suite == Suite::sensing_tmse) {
    CsvWriter csv({"config_hash", "snr_db", "trials", "tmse_mu", "tmse_mu_ci", "tmse_nu",
                   "tmse_nu_ci", "tmse_mu_esprit", "tmse_nu_esprit", "tcrb_mu", "tcrb_nu",
                   "missed_paths"});
    for (size_t s = 0; s < cfg.snr_db.size(); ++s) {
      const double sigma2 = cfg.sigma2_for(cfg.snr_db[s]);
      struct Row {
        double mu, nu, mu_ini, nu_ini, crb_mu, crb_nu;
        int missed;
      };
      std::vector<Row> rows(cfg.trials);
      parallel_for(cfg.trials, cfg.threads, [&](int t) {
        Rng scene_rng = Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kSceneKey});
        const Scene scene = trial_scene(cfg, setup, scene_rng);
        Rng gain_rng = Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kGainKey});
        const GainTensor gains =
            draw_gains(cfg.channel, scene.target_count(), setup.plan.count(), cfg.n_rx, gain_rng);
        const uint64_t noise_seed =
            Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kNoiseKey}).next_u64();
        const MeasurementCube cube = synthesize_measurements(scene, gains, setup.plan,
                                                             setup.geometry, cfg.waveform,
                                                             sigma2, noise_seed);
        const PairPathTable truth =
            true_pair_parameters(scene, gains, setup.plan, setup.geometry, cfg.waveform);
        const auto refined = run_pair_estimation(cube, cfg.h_max);
        const auto initial_only = run_pair_estimation(cube, 0);
        const TmseBreakdown mu_err = tmse(refined, truth, cfg.n_rx, TmseKind::mu);
        const TmseBreakdown nu_err = tmse(refined, truth, cfg.n_rx, TmseKind::nu);
        const TmseBreakdown mu_ini = tmse(initial_only, truth, cfg.n_rx, TmseKind::mu);
        const TmseBreakdown nu_ini = tmse(initial_only, truth, cfg.n_rx, TmseKind::nu);
        Row row{mu_err.total, nu_err.total, mu_ini.total, nu_ini.total, 0.0, 0.0, mu_err.missed};
        if (sigma2 > 0.0) {
          const TcrbResult crb = tcrb(truth, sigma2, cfg.waveform, setup.plan);
          row.crb_mu = crb.total.mu;
          row.crb_nu = crb.total.nu;
        }
        rows[t] = row;
      });
      std::vector<double> mu_v, nu_v, mu_i, nu_i, crb_mu_v, crb_nu_v;
      int missed = 0;
      for (const Row& r : rows) {
        mu_v.push_back(r.mu);
        nu_v.push_back(r.nu);
        mu_i.push_back(r.mu_ini);
        nu_i.push_back(r.nu_ini);
        crb_mu_v.push_back(r.crb_mu);
        crb_nu_v.push_back(r.crb_nu);
        missed += r.missed;
      }
      const MeanCi mu_stat = mean_ci(mu_v), nu_stat = mean_ci(nu_v);
      csv.add_row({hash, format_double(cfg.snr_db[s]), std::to_string(cfg.trials),
                   format_double(mu_stat.mean), format_double(mu_stat.ci),
                   format_double(nu_stat.mean), format_double(nu_stat.ci),
                   format_double(mean_ci(mu_i).mean), format_double(mean_ci(nu_i).mean),
                   format_double(mean_ci(crb_mu_v).mean), format_double(mean_ci(crb_nu_v).mean),
                   std::to_string(missed)});
    }
    const std::string path = out_dir + "/sensing_tmse.csv";
    write_file(path, csv.str());
    written.push_back(path);
  }

  if (suite == Suite::vibs_mse) {
    CsvWriter csv({"config_hash", "channel", "N_null", "snr_db", "trials", "mse_pos",
                   "mse_pos_db", "mse_pos_ci", "mse_vel", "mse_vel_db", "mse_vel_ci",
                   "missed_targets"});
    const std::string channel_name = cfg.channel.kind == GainKind::correlated
                                         ? "correlated"
                                         : (cfg.channel.kind == GainKind::suc ? "suc" : "sns");
    for (size_t s = 0; s < cfg.snr_db.size(); ++s) {
      const double sigma2 = cfg.sigma2_for(cfg.snr_db[s]);
      struct Row {
        double pos, vel;
        int missed;
      };
      std::vector<Row> rows(cfg.trials);
      parallel_for(cfg.trials, cfg.threads, [&](int t) {
        Rng scene_rng = Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kSceneKey});
        const Scene scene = trial_scene(cfg, setup, scene_rng);
        Rng gain_rng = Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kGainKey});
        const GainTensor gains =
            draw_gains(cfg.channel, scene.target_count(), setup.plan.count(), cfg.n_rx, gain_rng);
        const uint64_t noise_seed =
            Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kNoiseKey}).next_u64();
        const MeasurementCube cube = synthesize_measurements(scene, gains, setup.plan,
                                                             setup.geometry, cfg.waveform,
                                                             sigma2, noise_seed);
        const auto estimates = run_pair_estimation(cube, cfg.h_max);
        FusionOptions fusion;
        fusion.gda_iterations = cfg.h_prime_max;
        const uint64_t fuse_seed =
            Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kFuseKey}).next_u64();
        const auto targets =
            fuse_targets(estimates, setup.plan, setup.geometry, cfg.waveform, fuse_seed, fusion);
        const TargetMse mse = mse_targets(targets, scene.targets);
        rows[t] = Row{mse.position, mse.velocity, mse.missed};
      });
      std::vector<double> pos, vel;
      int missed = 0;
      for (const Row& r : rows) {
        pos.push_back(r.pos);
        vel.push_back(r.vel);
        missed += r.missed;
      }
      const MeanCi p = mean_ci(pos), v = mean_ci(vel);
      csv.add_row({hash, channel_name, std::to_string(cfg.channel.n_null),
                   format_double(cfg.snr_db[s]), std::to_string(cfg.trials),
                   format_double(p.mean), format_double(clamped_db(p.mean)), format_double(p.ci),
                   format_double(v.mean), format_double(clamped_db(v.mean)), format_double(v.ci),
                   std::to_string(missed)});
    }
    const std::string path = out_dir + "/vibs_mse.csv";
    write_file(path, csv.str());
    written.push_back(path);
  }

  if (suite == Suite::comm_nmse || suite == Suite::ber) {
    const PolarDictionary dictionary = build_polar_dictionary(
        setup.geometry.tx_positions, cfg.waveform.f_c, cfg.dict_d_min, cfg.dict_d_max,
        cfg.angle_oversample);

    if (suite == Suite::comm_nmse) {
      CsvWriter csv({"config_hash", "snr_db", "N_CE", "L_comm", "trials", "nmse_ini",
                     "nmse_ini_db", "nmse_enh", "nmse_enh_db", "improved_fraction"});
      std::vector<int> ce_grid = cfg.n_ce_grid.empty() ? std::vector<int>{cfg.n_ce}
                                                       : cfg.n_ce_grid;
      for (size_t s = 0; s < cfg.snr_db.size(); ++s) {
        for (size_t ci = 0; ci < ce_grid.size(); ++ci) {
          const int n_ce = ce_grid[ci];
          const PilotBlock pilots = generate_pilots(
              n_ce, cfg.cp_length, cfg.n_tx,
              Rng::derive(cfg.seed, {suite_key, 0x70, static_cast<uint64_t>(n_ce)}).next_u64());
          // The sensing matrices depend only on pilots and dictionary; build
          // them once per grid point and share across trials.
          const FdObservations design = assemble_fd(
              pilots, std::vector<Eigen::VectorXcd>(n_ce, Eigen::VectorXcd::Zero(cfg.cp_length)),
              cfg.waveform.P_Tx_com);
          const std::vector<Eigen::MatrixXcd> sensing = domp_sensing_matrices(design, dictionary);
          struct Row {
            double ini, enh;
            bool improved;
          };
          std::vector<Row> rows(cfg.trials);
          const uint64_t point = s * 1000 + ci;
          parallel_for(cfg.trials, cfg.threads, [&](int t) {
            rows[t] = [&]() -> Row {
              const double sigma2 = cfg.comm_sigma2_for(cfg.snr_db[s]);
              Rng scene_rng =
                  Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kSceneKey});
              const Scene scene = trial_scene(cfg, setup, scene_rng);
              Rng comm_rng =
                  Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kCommKey});
              const CommScene comm =
                  draw_comm_scene(cfg.scene_dist, cfg.l_com, cfg.l_comm, scene, cfg.ut_position,
                                  setup.geometry, cfg.waveform, cfg.cp_length, comm_rng);
              const auto taps = comm_cir_taps(comm, setup.geometry, cfg.waveform, cfg.cp_length);
              const auto fd_truth = comm_channel_fd(taps);
              Rng rx_rng =
                  Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kPilotRxKey});
              const auto received =
                  simulate_pilot_rx(pilots, taps, cfg.waveform.P_Tx_com, sigma2, rx_rng);
              const FdObservations obs = assemble_fd(pilots, received, cfg.waveform.P_Tx_com);
              CeResult ce = domp(obs, dictionary, std::min(10, n_ce), 1e-10, &sensing);
              const double ini = nmse(ce.initial, fd_truth);

              std::vector<Vec3> sensed;
              if (cfg.sensing_for_ce) {
                Rng gain_rng =
                    Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kGainKey});
                const GainTensor gains = draw_gains(cfg.channel, scene.target_count(),
                                                    setup.plan.count(), cfg.n_rx, gain_rng);
                const uint64_t noise_seed =
                    Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kNoiseKey})
                        .next_u64();
                const MeasurementCube cube =
                    synthesize_measurements(scene, gains, setup.plan, setup.geometry, cfg.waveform,
                                            cfg.sigma2_for(cfg.snr_db[s]), noise_seed);
                const auto estimates = run_pair_estimation(cube, cfg.h_max);
                FusionOptions fusion;
                fusion.gda_iterations = cfg.h_prime_max;
                const uint64_t fuse_seed =
                    Rng::derive(cfg.seed, {suite_key, point, static_cast<uint64_t>(t), kFuseKey})
                        .next_u64();
                for (const TargetEstimate& est : fuse_targets(estimates, setup.plan, setup.geometry,
                                                              cfg.waveform, fuse_seed, fusion))
                  sensed.push_back(est.position);
              } else {
                for (const Target& target : scene.targets) sensed.push_back(target.position);
              }
              sensing_enhance(ce, sensed, cfg.epsilon, setup.geometry.tx_positions,
                              cfg.waveform.f_c);
              refine_ls(ce, obs);
              const double enh = nmse(ce.enhanced, fd_truth);
              return Row{ini, enh, enh <= ini};
            }();
          });
          std::vector<double> ini_v, enh_v;
          int improved = 0;
          for (const Row& r : rows) {
            ini_v.push_back(r.ini);
            enh_v.push_back(r.enh);
            improved += r.improved ? 1 : 0;
          }
          const MeanCi ini_stat = mean_ci(ini_v), enh_stat = mean_ci(enh_v);
          csv.add_row({hash, format_double(cfg.snr_db[s]), std::to_string(n_ce),
                       std::to_string(cfg.l_comm), std::to_string(cfg.trials),
                       format_double(ini_stat.mean), format_double(clamped_db(ini_stat.mean)),
                       format_double(enh_stat.mean), format_double(clamped_db(enh_stat.mean)),
                       format_double(static_cast<double>(improved) / cfg.trials)});
        }
      }
      const std::string path = out_dir + "/comm_nmse.csv";
      write_file(path, csv.str());
      written.push_back(path);
    }

    if (suite == Suite::ber) {
      CsvWriter csv({"config_hash", "snr_db", "waveform", "ce_mode", "bits", "ber"});
      const long bits_per_trial =
          std::max(4L * cfg.waveform.K,
                   (cfg.ber_bits / std::max(1, cfg.trials)) / (4L * cfg.waveform.K) *
                       (4L * cfg.waveform.K));
      const PilotBlock pilots = generate_pilots(
          cfg.n_ce, cfg.cp_length, cfg.n_tx, Rng::derive(cfg.seed, {suite_key, 0x70}).next_u64());
      const FdObservations design = assemble_fd(
          pilots, std::vector<Eigen::VectorXcd>(cfg.n_ce, Eigen::VectorXcd::Zero(cfg.cp_length)),
          cfg.waveform.P_Tx_com);
      const std::vector<Eigen::MatrixXcd> sensing = domp_sensing_matrices(design, dictionary);
      for (size_t s = 0; s < cfg.snr_db.size(); ++s) {
        struct Row {
          double ber[2][3];  // [waveform][perfect, initial, enhanced]
        };
        std::vector<Row> rows(cfg.trials);
        parallel_for(cfg.trials, cfg.threads, [&](int t) {
          const double sigma2 = cfg.comm_sigma2_for(cfg.snr_db[s]);
          Rng scene_rng =
              Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kSceneKey});
          const Scene scene = trial_scene(cfg, setup, scene_rng);
          Rng comm_rng = Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kCommKey});
          const CommScene comm =
              draw_comm_scene(cfg.scene_dist, cfg.l_com, cfg.l_comm, scene, cfg.ut_position,
                              setup.geometry, cfg.waveform, cfg.cp_length, comm_rng);
          const auto taps = comm_cir_taps(comm, setup.geometry, cfg.waveform, cfg.cp_length);

          Rng rx_rng =
              Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kPilotRxKey});
          const auto received =
              simulate_pilot_rx(pilots, taps, cfg.waveform.P_Tx_com, sigma2, rx_rng);
          const FdObservations obs = assemble_fd(pilots, received, cfg.waveform.P_Tx_com);
          CeResult ce = domp(obs, dictionary, std::min(10, cfg.n_ce), 1e-10, &sensing);
          const auto initial_taps = fd_to_taps(ce.initial);
          std::vector<Vec3> sensed;
          for (const Target& target : scene.targets) sensed.push_back(target.position);
          sensing_enhance(ce, sensed, cfg.epsilon, setup.geometry.tx_positions, cfg.waveform.f_c);
          refine_ls(ce, obs);
          const auto enhanced_taps = fd_to_taps(ce.enhanced);

          BerConfig ber_cfg;
          ber_cfg.subcarriers = cfg.waveform.K;
          ber_cfg.p_tx = cfg.waveform.P_Tx_com;
          const uint64_t ber_seed =
              Rng::derive(cfg.seed, {suite_key, s, static_cast<uint64_t>(t), kBerKey}).next_u64();
          const std::vector<Eigen::VectorXcd>* csi[3] = {&taps, &initial_taps, &enhanced_taps};
          for (int w = 0; w < 2; ++w)
            for (int mode = 0; mode < 3; ++mode)
              rows[t].ber[w][mode] = ber_pipeline(
                  taps, *csi[mode], w == 0 ? BerWaveform::ocdm : BerWaveform::ofdm,
                  cfg.snr_db[s], bits_per_trial, ber_cfg, ber_seed + mode);
        });
        const char* waveform_names[2] = {"ocdm", "ofdm"};
        const char* mode_names[3] = {"perfect", "initial", "enhanced"};
        for (int w = 0; w < 2; ++w) {
          for (int mode = 0; mode < 3; ++mode) {
            double mean = 0.0;
            for (const Row& r : rows) mean += r.ber[w][mode];
            mean /= cfg.trials;
            csv.add_row({hash, format_double(cfg.snr_db[s]), waveform_names[w], mode_names[mode],
                         std::to_string(bits_per_trial * cfg.trials), format_double(mean)});
          }
        }
      }
      const std::string path = out_dir + "/ber.csv";
      write_file(path, csv.str());
      written.push_back(path);
    }
  }

  return written;
}

std::string emit_plot_script(const std::vector<std::string>& csv_paths) {
  std::ostringstream out;
  out << "#!/usr/bin/env python3\n"
      << "# Generated metric plots; reads the CSVs listed below.\n"
      << "import csv\n"
      << "import os\n"
      << "import matplotlib\n"
      << "matplotlib.use(\"Agg\")\n"
      << "import matplotlib.pyplot as plt\n\n"
      << "PATHS = [\n";
  for (const std::string& p : csv_paths) out << "    " << std::quoted(p) << ",\n";
  out << "]\n\n"
      << "def read_rows(path):\n"
      << "    with open(path, newline=\"\") as fh:\n"
      << "        return list(csv.DictReader(fh))\n\n"
      << "def group(rows, key):\n"
      << "    out = {}\n"
      << "    for r in rows:\n"
      << "        out.setdefault(r[key], []).append(r)\n"
      << "    return out\n\n"
      << "for path in PATHS:\n"
      << "    rows = read_rows(path)\n"
      << "    if not rows:\n"
      << "        continue\n"
      << "    stem = os.path.splitext(os.path.basename(path))[0]\n"
      << "    cols = rows[0].keys()\n"
      << "    fig, ax = plt.subplots(figsize=(6, 4.5))\n"
      << "    if \"tmse_mu\" in cols:\n"
      << "        x = [float(r[\"snr_db\"]) for r in rows]\n"
      << "        for name in (\"tmse_mu\", \"tmse_nu\", \"tmse_mu_esprit\", \"tmse_nu_esprit\","
         " \"tcrb_mu\", \"tcrb_nu\"):\n"
      << "            style = \"--\" if name.startswith(\"tcrb\") else \"-o\"\n"
      << "            ax.semilogy(x, [max(float(r[name]), 1e-300) for r in rows], style,"
         " label=name)\n"
      << "        ax.set_xlabel(\"SNR [dB]\"); ax.set_ylabel(\"total MSE / bound\")\n"
      << "    elif \"mse_pos_db\" in cols:\n"
      << "        for label, grp in sorted(group(rows, \"channel\").items()):\n"
      << "            x = [float(r[\"snr_db\"]) for r in grp]\n"
      << "            ax.plot(x, [float(r[\"mse_pos_db\"]) for r in grp], \"-o\","
         " label=f\"pos {label} null={grp[0]['N_null']}\")\n"
      << "            ax.plot(x, [float(r[\"mse_vel_db\"]) for r in grp], \"-s\","
         " label=f\"vel {label} null={grp[0]['N_null']}\")\n"
      << "        ax.set_xlabel(\"SNR [dB]\"); ax.set_ylabel(\"MSE [dB]\")\n"
      << "    elif \"nmse_ini_db\" in cols:\n"
      << "        for n_ce, grp in sorted(group(rows, \"N_CE\").items(), key=lambda kv:"
         " int(kv[0])):\n"
      << "            x = [float(r[\"snr_db\"]) for r in grp]\n"
      << "            ax.plot(x, [float(r[\"nmse_ini_db\"]) for r in grp], \"-o\","
         " label=f\"initial N_CE={n_ce}\")\n"
      << "            ax.plot(x, [float(r[\"nmse_enh_db\"]) for r in grp], \"-s\","
         " label=f\"enhanced N_CE={n_ce}\")\n"
      << "        ax.set_xlabel(\"SNR [dB]\"); ax.set_ylabel(\"NMSE [dB]\")\n"
      << "    elif \"ber\" in cols:\n"
      << "        combos = {}\n"
      << "        for r in rows:\n"
      << "            combos.setdefault((r[\"waveform\"], r[\"ce_mode\"]), []).append(r)\n"
      << "        for (wf, mode), grp in sorted(combos.items()):\n"
      << "            x = [float(r[\"snr_db\"]) for r in grp]\n"
      << "            ax.semilogy(x, [max(float(r[\"ber\"]), 1e-8) for r in grp], \"-o\","
         " label=f\"{wf} {mode}\")\n"
      << "        ax.set_xlabel(\"SNR [dB]\"); ax.set_ylabel(\"BER\")\n"
      << "    ax.grid(True, which=\"both\", alpha=0.3)\n"
      << "    ax.legend(fontsize=8)\n"
      << "    fig.tight_layout()\n"
      << "    fig.savefig(stem + \".png\", dpi=150)\n"
      << "    print(\"wrote\", stem + \".png\")\n";
  return out.str();
}

std::string describe_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  cfg.waveform.validate();
  auto [d_min, d_max] = subcarrier_spacing_bounds(cfg.waveform);
  out << "config hash: " << config_hash(cfg) << "\n"
      << "T = " << format_double(cfg.waveform.T()) << " s, Q = " << cfg.waveform.Q()
      << ", mu_max = " << format_double(cfg.waveform.mu_max()) << "\n"
      << "subcarrier spacing bounds: [" << d_min << ", " << d_max << "]\n"
      << "candidate subcarrier grid: {";
  const auto grid = subcarrier_candidate_grid(cfg.waveform);
  for (size_t i = 0; i < grid.size(); ++i) out << (i ? "," : "") << grid[i];
  out << "}\n"
      << "geometry: N_Tx = " << cfg.n_tx << ", N_Rx = " << cfg.n_rx
      << ", aperture = " << format_double((cfg.n_tx - 1) * cfg.waveform.lambda() / 2.0) << " m\n"
      << "sigma^2 at snr grid:";
  for (double s : cfg.snr_db) out << " " << format_double(cfg.sigma2_for(s));
  out << "\n";
  return out.str();
}

}  // namespace isac
