#include "pgff/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace pgff {

namespace {

using json = nlohmann::json;

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return json::parse(in);
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << doc.dump(2) << '\n';
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& rel) {
  const std::filesystem::path p(rel);
  return p.is_absolute() ? p : base / p;
}

void note_artifact(const std::filesystem::path& path) {
  std::cout << "wrote " << path.string() << '\n';
}

// FNV-1a over the raw bytes of the trajectory arrays; identifies "same
// evaluation trajectory" across runs for compare.
std::string trajectory_checksum(const Trajectory& traj) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Eigen::VectorXd& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    const std::size_t count = static_cast<std::size_t>(v.size()) * sizeof(double);
    for (std::size_t i = 0; i < count; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  mix(traj.theta_d);
  mix(traj.theta_d_dot);
  mix(traj.theta_d_ddot);
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

struct NormRow {
  std::string controller;
  ErrorNorms norms;
};

void write_norms_csv(const std::vector<NormRow>& rows,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "controller,rms,ma,inf\n";
  for (const NormRow& row : rows) {
    out << row.controller << ',' << format_double(row.norms.rms) << ','
        << format_double(row.norms.ma) << ',' << format_double(row.norms.inf)
        << '\n';
  }
}

std::vector<NormRow> read_norms_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || (line != "controller,rms,ma,inf" &&
                                  line != "controller,rms,ma,inf\r")) {
    throw std::runtime_error(path.string() + ": bad norms header");
  }
  std::vector<NormRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    NormRow row;
    std::string field;
    if (!std::getline(ss, row.controller, ',')) continue;
    if (!std::getline(ss, field, ',')) {
      throw std::runtime_error(path.string() + ": malformed row");
    }
    row.norms.rms = std::stod(field);
    if (!std::getline(ss, field, ',')) {
      throw std::runtime_error(path.string() + ": malformed row");
    }
    row.norms.ma = std::stod(field);
    if (!std::getline(ss, field)) {
      throw std::runtime_error(path.string() + ": malformed row");
    }
    row.norms.inf = std::stod(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

const NormRow* find_controller(const std::vector<NormRow>& rows,
                               const std::string& name) {
  for (const NormRow& row : rows) {
    if (row.controller == name) return &row;
  }
  return nullptr;
}

// f_M evaluated on feature columns (theta, dtheta, ddtheta rows).
Eigen::VectorXd f_m_features(const FeatureSet& features,
                             const PhysicalParams& zeta,
                             const PhysicalConstants& c) {
  Eigen::VectorXd out(features.size());
  for (Eigen::Index k = 0; k < features.size(); ++k) {
    out[k] = f_m_sample(features.x(0, k), features.x(1, k), features.x(2, k),
                        zeta, c);
  }
  return out;
}

// Dataset features per the fit's training-time choice.
FeatureSet dataset_features(const IODataset& ds, const FitSummary& fs,
                            const std::filesystem::path& run_dir) {
  if (fs.feature_source == FeatureSource::kMeasured) {
    return transform_measured(ds, fs.relay_deadband);
  }
  const Trajectory ref =
      read_trajectory_csv(run_dir / "trajectory_train.csv", ds.ts);
  if (ref.size() != ds.size()) {
    throw std::runtime_error(
        "evaluate: trajectory_train.csv does not match dataset length");
  }
  return transform(ref, fs.relay_deadband);
}

}  // namespace

ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  const json doc = parse_json_file(path);
  const std::filesystem::path base =
      std::filesystem::absolute(path).parent_path();
  ExperimentConfig cfg;
  cfg.plant_config = resolve(base, doc.at("plant_config").get<std::string>());
  cfg.train_config = resolve(base, doc.at("train_config").get<std::string>());
  if (doc.contains("train_trajectory")) {
    cfg.train_trajectory =
        resolve(base, doc.at("train_trajectory").get<std::string>());
  }
  if (doc.contains("eval_trajectory")) {
    cfg.eval_trajectory =
        resolve(base, doc.at("eval_trajectory").get<std::string>());
  }
  if (doc.contains("out_dir")) {
    cfg.out_dir = resolve(base, doc.at("out_dir").get<std::string>());
  }
  if (doc.contains("seed")) {
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }
  return cfg;
}

TrajectorySpec read_trajectory_spec(const std::filesystem::path& path) {
  const json doc = parse_json_file(path);
  TrajectorySpec spec;
  spec.ts = doc.value("ts", spec.ts);
  spec.start = doc.value("start", spec.start);
  for (const json& s : doc.at("segments")) {
    MoveSegment seg;
    seg.target = s.at("target").get<double>();
    seg.vmax = s.value("vmax", 0.0);
    seg.amax = s.value("amax", 0.0);
    seg.dwell = s.value("dwell", 0.0);
    spec.segments.push_back(seg);
  }
  return spec;
}

void run_gen_traj(const std::filesystem::path& spec_path,
                  const std::filesystem::path& out_dir) {
  const TrajectorySpec spec = read_trajectory_spec(spec_path);
  const Trajectory traj = generate_reference(spec.segments, spec.ts, spec.start);

  // Cross-check the analytic velocity against the finite-difference
  // stencil; they agree to O(ts * amax) except at profile corners.
  const Trajectory fd = differentiate_reference(traj.theta_d, traj.ts);
  const double amax = traj.theta_d_ddot.cwiseAbs().maxCoeff();
  const double bound = 2.0 * amax * traj.ts + 1e-9;
  const double err =
      (fd.theta_d_dot - traj.theta_d_dot).cwiseAbs().maxCoeff();
  if (err > bound) {
    throw std::logic_error("gen-traj: generator and difference stencil "
                           "disagree beyond tolerance");
  }

  const std::filesystem::path out = out_dir / "trajectory.csv";
  write_trajectory_csv(traj, out);
  note_artifact(out);
}

void run_gen_data(const ExperimentConfig& cfg) {
  if (cfg.train_trajectory.empty()) {
    throw std::invalid_argument("gen-data: config has no train_trajectory");
  }
  const PlantConfig pc = read_plant_config(cfg.plant_config);
  const TrajectorySpec spec = read_trajectory_spec(cfg.train_trajectory);
  if (spec.ts != pc.plant.ts) {
    throw std::invalid_argument("gen-data: trajectory/plant ts mismatch");
  }
  const Trajectory traj =
      generate_reference(spec.segments, spec.ts, spec.start);
  const SimResult sim = run_closed_loop(traj, pc.gains, pc.plant);

  const auto traj_path = cfg.out_dir / "trajectory_train.csv";
  const auto sim_path = cfg.out_dir / "sim_train.csv";
  const auto ds_path = cfg.out_dir / "dataset.csv";
  write_trajectory_csv(traj, traj_path);
  write_sim_csv(sim, sim_path);
  write_dataset_csv(to_io_dataset(sim), ds_path);
  note_artifact(traj_path);
  note_artifact(sim_path);
  note_artifact(ds_path);
}

PhysicalFitResult run_fit_physical(const ExperimentConfig& cfg) {
  const PlantConfig pc = read_plant_config(cfg.plant_config);
  const TrainConfig tc = read_train_config(cfg.train_config);
  const IODataset ds =
      read_dataset_csv(cfg.out_dir / "dataset.csv", pc.plant.ts);

  // Same recipe as the training initialization: differentiate the whole
  // record, fit on the train block.
  const FeatureSet all = transform_measured(ds, tc.relay_deadband);
  const SplitIndices split =
      split_dataset(ds.size(), tc.f_train, tc.f_val, tc.f_test);
  const FeatureSet train_f = all.block(split.train.begin, split.train.count());
  const PhysicalFitResult fit = fit_physical_features(
      ds.u_hat.segment(split.train.begin, split.train.count()), train_f,
      pc.plant.constants, tc.physical_search);
  if (fit.degenerate) {
    throw std::runtime_error(
        "fit-physical: dataset is degenerate (rank-deficient basis matrix)");
  }

  const Eigen::VectorXd rho =
      ds.u_hat - f_m_features(all, fit.params, pc.plant.constants);
  const ErrorNorms norms = error_norms(rho);

  json doc;
  doc["format_version"] = 1;
  doc["zeta"] = std::vector<double>{fit.params.m, fit.params.jxx, fit.params.d,
                                    fit.params.y, fit.params.z};
  doc["residual_sq"] = fit.residual_sq;
  doc["degenerate"] = fit.degenerate;
  doc["residual_norms"] = {
      {"rms", norms.rms}, {"ma", norms.ma}, {"inf", norms.inf}};
  const auto out = cfg.out_dir / "physical_fit.json";
  write_json_file(doc, out);
  note_artifact(out);
  return fit;
}

FitResult run_train(const ExperimentConfig& cfg,
                    std::optional<RegularizerMode> mode_override,
                    std::optional<double> lambda_override,
                    std::optional<std::uint64_t> seed_override) {
  const PlantConfig pc = read_plant_config(cfg.plant_config);
  TrainConfig tc = read_train_config(cfg.train_config);
  if (mode_override) tc.mode = *mode_override;
  if (lambda_override) tc.lambda = *lambda_override;
  if (seed_override) {
    tc.seed = *seed_override;
  } else if (cfg.seed) {
    tc.seed = *cfg.seed;
  }

  const IODataset ds =
      read_dataset_csv(cfg.out_dir / "dataset.csv", pc.plant.ts);
  Trajectory ref;
  const Trajectory* ref_ptr = nullptr;
  if (tc.feature_source == FeatureSource::kReference) {
    ref = read_trajectory_csv(cfg.out_dir / "trajectory_train.csv",
                              pc.plant.ts);
    ref_ptr = &ref;
  }

  const FitResult fit = train(ds, tc, pc.plant.constants, ref_ptr);

  const auto model_path = cfg.out_dir / "model.json";
  const auto fit_path = cfg.out_dir / "fit.json";
  const auto hist_path = cfg.out_dir / "history.csv";
  save_model(fit.phi, model_path);
  write_fit_json(fit, tc, fit_path);
  write_history_csv(fit.history, hist_path);
  note_artifact(model_path);
  note_artifact(fit_path);
  note_artifact(hist_path);
  return fit;
}

void run_evaluate(const ExperimentConfig& cfg) {
  if (cfg.eval_trajectory.empty()) {
    throw std::invalid_argument("evaluate: config has no eval_trajectory");
  }
  const PlantConfig pc = read_plant_config(cfg.plant_config);
  const PhysicalConstants& c = pc.plant.constants;
  const TrajectorySpec spec = read_trajectory_spec(cfg.eval_trajectory);
  const Trajectory traj =
      generate_reference(spec.segments, spec.ts, spec.start);

  const FitSummary fs = read_fit_json(cfg.out_dir / "fit.json");
  const MLPParams phi = load_model(cfg.out_dir / "model.json");
  const std::string pgnn_name =
      fs.mode == RegularizerMode::kOrthogonalProjection ? "pgnn_op"
                                                        : "pgnn_ls";

  // Closed-loop tracking with the three controllers.
  const SimResult sim_none = run_closed_loop(traj, pc.gains, pc.plant);
  const Eigen::VectorXd ff_phys = f_m(traj, fs.zeta0, c);
  const SimResult sim_phys =
      run_closed_loop(traj, pc.gains, pc.plant, &ff_phys);
  const FeatureSet eval_features = transform(traj, phi.relay_deadband);
  const Eigen::VectorXd f_m_eval = f_m(traj, fs.zeta, c);
  const Eigen::VectorXd f_c_eval = forward_batch(phi, eval_features);
  const Eigen::VectorXd ff_model = f_m_eval + f_c_eval;
  const SimResult sim_model =
      run_closed_loop(traj, pc.gains, pc.plant, &ff_model);

  write_sim_csv(sim_none, cfg.out_dir / "eval_none.csv");
  write_sim_csv(sim_phys, cfg.out_dir / "eval_physical.csv");
  write_sim_csv(sim_model, cfg.out_dir / ("eval_" + pgnn_name + ".csv"));
  note_artifact(cfg.out_dir / "eval_none.csv");
  note_artifact(cfg.out_dir / "eval_physical.csv");
  note_artifact(cfg.out_dir / ("eval_" + pgnn_name + ".csv"));

  // Feedforward decomposition series for plotting.
  {
    const auto path = cfg.out_dir / ("feedforward_" + pgnn_name + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot write " + path.string());
    }
    out << "k,theta_d,f_m,f_c,u_ff\n";
    for (Eigen::Index k = 0; k < traj.size(); ++k) {
      out << k << ',' << format_double(traj.theta_d[k]) << ','
          << format_double(f_m_eval[k]) << ',' << format_double(f_c_eval[k])
          << ',' << format_double(ff_model[k]) << '\n';
    }
    note_artifact(path);
  }

  // Tracking-error norms per controller.
  const std::vector<NormRow> norm_rows = {
      {"none", error_norms(sim_none.e)},
      {"physical", error_norms(sim_phys.e)},
      {pgnn_name, error_norms(sim_model.e)},
  };
  write_norms_csv(norm_rows, cfg.out_dir / "norms.csv");
  note_artifact(cfg.out_dir / "norms.csv");

  // Dataset input-residual norms, on the same features the models were
  // fitted with.
  const IODataset ds =
      read_dataset_csv(cfg.out_dir / "dataset.csv", pc.plant.ts);
  const FeatureSet df = dataset_features(ds, fs, cfg.out_dir);
  const Eigen::VectorXd rho_phys = ds.u_hat - f_m_features(df, fs.zeta0, c);
  const Eigen::VectorXd rho_model =
      ds.u_hat - f_m_features(df, fs.zeta, c) - forward_batch(phi, df);
  const std::vector<NormRow> residual_rows = {
      {"physical", error_norms(rho_phys)},
      {pgnn_name, error_norms(rho_model)},
  };
  write_norms_csv(residual_rows, cfg.out_dir / "residuals.csv");
  note_artifact(cfg.out_dir / "residuals.csv");

  // Complementarity ratio ||U1' f_C|| / ||f_C|| on the train block.
  const SplitIndices split =
      split_dataset(ds.size(), fs.f_train, fs.f_val, fs.f_test);
  const FeatureSet train_f = df.block(split.train.begin, split.train.count());
  const ProjectionBasis basis = compute_basis(
      basis_matrix(train_f.x.row(0).transpose(), train_f.x.row(1).transpose(),
                   train_f.x.row(2).transpose(), fs.zeta_n0, c));
  const Eigen::VectorXd f_c_train = forward_batch(phi, train_f);
  const double f_c_norm = f_c_train.norm();
  const double ratio =
      f_c_norm > 0.0 && basis.r > 0
          ? (basis.u1.transpose() * f_c_train).norm() / f_c_norm
          : 0.0;

  json meta;
  meta["format_version"] = 1;
  meta["controller"] = pgnn_name;
  meta["mode"] = to_string(fs.mode);
  meta["lambda"] = fs.lambda;
  meta["seed"] = fs.seed;
  meta["trajectory_checksum"] = trajectory_checksum(traj);
  meta["complementarity_ratio"] = ratio;
  meta["f_c_train_norm"] = f_c_norm;
  meta["zeta_l_distance_to_baseline"] =
      (fs.zeta.zeta_l() - fs.zeta0.zeta_l()).norm();
  write_json_file(meta, cfg.out_dir / "eval_meta.json");
  note_artifact(cfg.out_dir / "eval_meta.json");
}

void run_compare(const std::vector<std::filesystem::path>& run_dirs,
                 const std::filesystem::path& out_dir) {
  if (run_dirs.size() < 2) {
    throw std::invalid_argument("compare: need at least two run directories");
  }
  struct RunData {
    std::string label;
    json meta;
    std::vector<NormRow> norms;
    std::vector<NormRow> residuals;
  };
  std::vector<RunData> runs;
  for (const auto& dir : run_dirs) {
    RunData run;
    run.label = dir.string();
    run.meta = parse_json_file(dir / "eval_meta.json");
    run.norms = read_norms_csv(dir / "norms.csv");
    run.residuals = read_norms_csv(dir / "residuals.csv");
    runs.push_back(std::move(run));
  }
  const std::string checksum =
      runs.front().meta.at("trajectory_checksum").get<std::string>();
  for (const RunData& run : runs) {
    if (run.meta.at("trajectory_checksum").get<std::string>() != checksum) {
      throw std::runtime_error(
          "compare: runs were evaluated on different trajectories");
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
  }
  const auto path = out_dir / "compare.csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "run,controller,rms,ma,inf,improvement_factor,residual_rms,"
         "residual_improvement,complementarity_ratio,rms_vs_first\n";
  for (const RunData& run : runs) {
    const NormRow* phys = find_controller(run.norms, "physical");
    const NormRow* res_phys = find_controller(run.residuals, "physical");
    const std::string pgnn =
        run.meta.at("controller").get<std::string>();
    for (const NormRow& row : run.norms) {
      out << run.label << ',' << row.controller << ','
          << format_double(row.norms.rms) << ',' << format_double(row.norms.ma)
          << ',' << format_double(row.norms.inf) << ',';
      if (phys && row.norms.rms > 0.0) {
        out << format_double(phys->norms.rms / row.norms.rms);
      }
      out << ',';
      const NormRow* res = find_controller(run.residuals, row.controller);
      if (res) out << format_double(res->norms.rms);
      out << ',';
      if (res && res_phys && res->norms.rms > 0.0) {
        out << format_double(res_phys->norms.rms / res->norms.rms);
      }
      out << ',';
      if (row.controller == pgnn) {
        out << format_double(
            run.meta.at("complementarity_ratio").get<double>());
      }
      out << ',';
      const NormRow* first =
          find_controller(runs.front().norms, row.controller);
      if (first && first->norms.rms > 0.0) {
        out << format_double(row.norms.rms / first->norms.rms);
      }
      out << '\n';
    }
  }
  note_artifact(path);
}

}  // namespace pgff
