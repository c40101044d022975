// Orchestration of the experimental protocol behind the CLI subcommands:
// trajectory generation, feedback-only data collection, the physical-only
// fit, training, closed-loop evaluation and cross-run comparison.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pgff/plant_sim.hpp"
#include "pgff/training.hpp"

namespace pgff {

/// Paths and seed of one experiment. Relative paths in the file are
/// resolved against the directory containing it.
struct ExperimentConfig {
  std::filesystem::path plant_config;
  std::filesystem::path train_config;
  std::filesystem::path train_trajectory;  // trajectory spec for gen-data
  std::filesystem::path eval_trajectory;   // trajectory spec for evaluate
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
};
ExperimentConfig read_experiment_config(const std::filesystem::path& path);

/// Trajectory spec file: sample period, start angle and move segments.
struct TrajectorySpec {
  double ts = 1.0 / 500.0;
  double start = 0.0;
  std::vector<MoveSegment> segments;
};
TrajectorySpec read_trajectory_spec(const std::filesystem::path& path);

/// Generates the spec'd trajectory, cross-checks the analytic velocity
/// against the finite-difference stencil, and writes out_dir/trajectory.csv.
void run_gen_traj(const std::filesystem::path& spec_path,
                  const std::filesystem::path& out_dir);

/// Runs the feedback-only loop over the training trajectory and writes
/// dataset.csv, sim_train.csv and trajectory_train.csv into out_dir.
void run_gen_data(const ExperimentConfig& cfg);

/// Fits the physical-only model on out_dir/dataset.csv and writes
/// physical_fit.json with the parameters and rms/ma/inf residual norms.
/// A degenerate dataset is an error and produces no artifact.
PhysicalFitResult run_fit_physical(const ExperimentConfig& cfg);

/// Full training run on out_dir/dataset.csv; writes model.json, fit.json
/// and history.csv. Overrides win over the training config file; the seed
/// falls back to the experiment config and then the training config.
FitResult run_train(const ExperimentConfig& cfg,
                    std::optional<RegularizerMode> mode_override = {},
                    std::optional<double> lambda_override = {},
                    std::optional<std::uint64_t> seed_override = {});

/// Closed-loop evaluation on the (unseen) evaluation trajectory for the
/// feedback-only, physical-only and trained controllers. Writes norms.csv,
/// residuals.csv, per-controller SimResult CSVs, the f_M/f_C decomposition
/// series and eval_meta.json (trajectory checksum, complementarity ratio).
void run_evaluate(const ExperimentConfig& cfg);

/// Merges the evaluation outputs of two or more run directories into
/// out_dir/compare.csv with improvement factors and ratios against the
/// first run. Runs must share the evaluation trajectory.
void run_compare(const std::vector<std::filesystem::path>& run_dirs,
                 const std::filesystem::path& out_dir);

}  // namespace pgff
