// Config parsing, determinism, and plot-script generation tests.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "isac/experiment.hpp"

using namespace isac;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.snr_db = {20.0, 30.0};
  cfg.trials = 4;
  cfg.seed = 12345;
  cfg.targets = 2;
  return cfg;
}

}  // namespace

TEST_CASE("empty config yields the default parameter table") {
  const ExperimentConfig cfg = parse_config("{}");
  CHECK(cfg.waveform.K == 256);
  CHECK(cfg.waveform.B == doctest::Approx(100e6));
  CHECK(cfg.waveform.M == 64);
  CHECK(cfg.n_tx == 512);
  CHECK(cfg.n_rx == 4);
  CHECK(cfg.n_sensing == 4);
  CHECK(cfg.targets == 3);
  CHECK(cfg.d_rx == doctest::Approx(1.0));
  CHECK(cfg.h_max == 30);
  CHECK(cfg.h_prime_max == 10);
  CHECK(cfg.epsilon == doctest::Approx(0.6));
  CHECK(cfg.cp_length == 32);
  CHECK(cfg.waveform.T_com == doctest::Approx(10.9e-6));
  CHECK(cfg.waveform.P_Tx == doctest::Approx(100.0));  // 50 dBm
  CHECK(cfg.waveform.Q() == 30);
}

TEST_CASE("config parsing and validation errors") {
  CHECK_THROWS_WITH_AS(parse_config("{"), doctest::Contains("parse error"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"experiment":{"snr_db":[]}})"),
                       doctest::Contains("snr_db"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"experiment":{"snr_db":["x"]}})"),
                       doctest::Contains("snr_db"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"waveform":{"K":255}})"), doctest::Contains("even"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"sensing":{"bogus":1}})"), doctest::Contains("bogus"),
                       std::runtime_error);

  const ExperimentConfig cfg = parse_config(R"({
    "waveform": {"K": 128, "B": 50e6},
    "sensing": {"channel": "sns", "N_null": 2},
    "scene": {"targets": [{"position": [1, 2, 5], "velocity": [0, 0, 1]}]},
    "experiment": {"snr_db": [10], "trials": 2, "seed": 7}
  })");
  CHECK(cfg.waveform.K == 128);
  CHECK(cfg.channel.kind == GainKind::sns);
  CHECK(cfg.channel.n_null == 2);
  REQUIRE(cfg.explicit_targets.size() == 1);
  CHECK(cfg.explicit_targets[0].position.z() == doctest::Approx(5.0));
  CHECK(cfg.seed == 7);
}

TEST_CASE("config hash is stable and sensitive") {
  const ExperimentConfig a = parse_config("{}");
  const ExperimentConfig b = parse_config("{}");
  CHECK(config_hash(a) == config_hash(b));
  ExperimentConfig c = a;
  c.seed = 999;
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("describe reports derived quantities") {
  const std::string text = describe_config(parse_config("{}"));
  CHECK(text.find("Q = 30") != std::string::npos);
  CHECK(text.find("[48, 208]") != std::string::npos);
  CHECK(text.find("0,48,96,144,192") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical output at any thread count") {
  ExperimentConfig cfg = small_config();
  const std::string dir1 = "det_run_t1";
  const std::string dir4 = "det_run_t4";
  cfg.threads = 1;
  run_experiment(cfg, Suite::sensing_tmse, dir1, true);
  cfg.threads = 4;
  run_experiment(cfg, Suite::sensing_tmse, dir4, true);
  CHECK(slurp(dir1 + "/sensing_tmse.csv") == slurp(dir4 + "/sensing_tmse.csv"));

  // Re-run with the same seed reproduces the bytes exactly.
  run_experiment(cfg, Suite::sensing_tmse, dir1, true);
  CHECK(slurp(dir1 + "/sensing_tmse.csv") == slurp(dir4 + "/sensing_tmse.csv"));

  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir4);
}

TEST_CASE("noiseless run reaches the numerical floor") {
  ExperimentConfig cfg = small_config();
  cfg.noiseless = true;
  cfg.trials = 2;
  cfg.snr_db = {0.0};
  cfg.threads = 1;
  const std::string dir = "noiseless_run";
  const auto paths = run_experiment(cfg, Suite::sensing_tmse, dir, true);
  REQUIRE(paths.size() == 1);
  const std::string body = slurp(paths[0]);
  // Parse the tmse_mu column of the single data row.
  std::istringstream lines(body);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  std::stringstream fields(row);
  std::string field;
  for (int i = 0; i <= 3; ++i) std::getline(fields, field, ',');
  CHECK(std::stod(field) < 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("csv rows carry the config hash") {
  ExperimentConfig cfg = small_config();
  cfg.trials = 2;
  cfg.snr_db = {20.0};
  cfg.threads = 1;
  const std::string dir = "hash_run";
  const auto paths = run_experiment(cfg, Suite::sensing_tmse, dir, true);
  const std::string body = slurp(paths[0]);
  CHECK(body.find(config_hash(cfg)) != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plot script generation") {
  const std::vector<std::string> paths{"a/sensing_tmse.csv", "b/ber.csv"};
  const std::string script = emit_plot_script(paths);
  CHECK(script.find("sensing_tmse.csv") != std::string::npos);
  CHECK(script.find("matplotlib") != std::string::npos);
  // Deterministic regeneration.
  CHECK(emit_plot_script(paths) == script);
  // Single CSV gives a single-panel script; two give two.
  const std::string single = emit_plot_script({"x.csv"});
  CHECK(single.find("x.csv") != std::string::npos);
}

TEST_CASE("desk preset shrinks the array and trial budget") {
  ExperimentConfig cfg = parse_config("{}");
  apply_desk_preset(cfg);
  CHECK(cfg.n_tx == 128);
  CHECK(cfg.trials <= 100);
  CHECK(cfg.cp_length == 16);
  CHECK(!cfg.n_ce_grid.empty());
}
