// isac_sim_main.cpp - experiment driver CLI
//
// Subcommands:
//   run             run one experiment suite and write its CSV
//   validate-config parse a config and print derived quantities
//   plot            generate a plotting script from result CSVs
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isac/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"chirp-based integrated sensing and communication simulator"};
  app.require_subcommand(1);

  std::string suite_name_arg = "sensing_tmse";
  std::string config_path;
  std::string out_dir = "results";
  uint64_t seed = 0;
  bool seed_given = false;
  bool desk = false;
  int threads = -1;

  CLI::App* run = app.add_subcommand("run", "run an experiment suite");
  run->add_option("--suite", suite_name_arg,
                  "suite: sensing_tmse, vibs_mse, comm_nmse or ber")
      ->required();
  run->add_option("--config", config_path, "JSON config path (omit for defaults)");
  run->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--threads", threads, "worker threads (0 = hardware)");
  run->add_flag("--preset-desk,--preset", desk, "desk-scale preset (smaller array, fewer trials)");

  std::string validate_path;
  CLI::App* validate = app.add_subcommand("validate-config", "check a config file");
  validate->add_option("config", validate_path, "JSON config path")->required();

  std::vector<std::string> csv_paths;
  std::string script_out = "isac_plots.py";
  CLI::App* plot = app.add_subcommand("plot", "emit a plotting script for result CSVs");
  plot->add_option("csv", csv_paths, "result CSV paths")->required();
  plot->add_option("--out", script_out, "script output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      isac::ExperimentConfig cfg =
          config_path.empty() ? isac::ExperimentConfig{} : isac::load_config(config_path);
      if (desk) isac::apply_desk_preset(cfg);
      if (seed_given) cfg.seed = seed;
      if (threads >= 0) cfg.threads = threads;
      const auto paths =
          isac::run_experiment(cfg, isac::suite_from_name(suite_name_arg), out_dir);
      for (const std::string& p : paths) std::cout << "wrote " << p << "\n";
    } else if (*validate) {
      const isac::ExperimentConfig cfg = isac::load_config(validate_path);
      std::cout << isac::describe_config(cfg);
      std::cout << "config ok\n";
    } else if (*plot) {
      for (const std::string& p : csv_paths)
        if (!std::filesystem::exists(p)) throw std::runtime_error("missing CSV: " + p);
      std::ofstream out(script_out, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + script_out);
      out << isac::emit_plot_script(csv_paths);
      std::cout << "wrote " << script_out << "\n";
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
