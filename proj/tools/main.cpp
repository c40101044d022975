// pgff command-line driver. Subcommands cover the full experimental
// pipeline: gen-traj, gen-data, fit-physical, train, evaluate, compare.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgff/experiment.hpp"

namespace {

namespace fs = std::filesystem;

struct GlobalOpts {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Experiment config with the --seed / --out overrides applied.
pgff::ExperimentConfig load_experiment(const GlobalOpts& g) {
  if (g.config.empty()) {
    throw CLI::ValidationError("--config", "an experiment config is required");
  }
  pgff::ExperimentConfig cfg = pgff::read_experiment_config(g.config);
  if (!g.out.empty()) {
    cfg.out_dir = g.out;
  }
  if (cfg.out_dir.empty()) {
    throw CLI::ValidationError("--out",
                               "no output directory (config or --out)");
  }
  if (g.seed) {
    cfg.seed = g.seed;
  }
  fs::create_directories(cfg.out_dir);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-guided neural network feedforward control toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "experiment (or trajectory) config");
  app.add_option("--out", g.out, "output directory override");
  auto* seed_opt =
      app.add_option("--seed", seed_value, "RNG seed override for training");

  CLI::App* gen_traj =
      app.add_subcommand("gen-traj", "generate a reference trajectory CSV");
  CLI::App* gen_data = app.add_subcommand(
      "gen-data", "collect a feedback-only identification dataset");
  CLI::App* fit_physical = app.add_subcommand(
      "fit-physical", "fit the physical-only model on the dataset");
  CLI::App* train =
      app.add_subcommand("train", "train the parallel network + model");
  std::string mode_name;
  double lambda_value = 0.0;
  train->add_option("--mode", mode_name, "regularizer override: ls|op");
  auto* lambda_opt = train->add_option("--lambda", lambda_value,
                                       "regularization weight override");
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "closed-loop evaluation of all controllers");
  CLI::App* compare =
      app.add_subcommand("compare", "merge evaluation results across runs");
  std::vector<std::string> run_dirs;
  compare->add_option("dirs", run_dirs, "run directories to compare")
      ->expected(-2);

  CLI11_PARSE(app, argc, argv);

  if (seed_opt->count() > 0) {
    g.seed = seed_value;
  }

  try {
    if (gen_traj->parsed()) {
      if (g.config.empty()) {
        throw CLI::ValidationError("--config",
                                   "a trajectory spec is required");
      }
      const fs::path out = g.out.empty() ? fs::path(".") : fs::path(g.out);
      fs::create_directories(out);
      pgff::run_gen_traj(g.config, out);
    } else if (gen_data->parsed()) {
      pgff::run_gen_data(load_experiment(g));
    } else if (fit_physical->parsed()) {
      pgff::run_fit_physical(load_experiment(g));
    } else if (train->parsed()) {
      std::optional<pgff::RegularizerMode> mode;
      if (!mode_name.empty()) {
        mode = pgff::regularizer_mode_from_string(mode_name);
      }
      std::optional<double> lambda;
      if (lambda_opt->count() > 0) {
        lambda = lambda_value;
      }
      pgff::run_train(load_experiment(g), mode, lambda, g.seed);
    } else if (evaluate->parsed()) {
      pgff::run_evaluate(load_experiment(g));
    } else if (compare->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const fs::path out = g.out.empty() ? fs::path(".") : fs::path(g.out);
      pgff::run_compare(dirs, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
