#include "pgff/plant_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace pgff {

namespace {

using json = nlohmann::json;

double smooth_sign(double v, double v_epsilon) {
  if (v_epsilon > 0.0) return std::tanh(v / v_epsilon);
  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

}  // namespace

double parasitic_torque(double theta, double theta_dot, const PlantParams& p) {
  const double cable =
      -p.cable_stiffness * std::min(theta - p.cable_engage_angle, 0.0);
  double friction = (p.coulomb_base + p.coulomb_modulation * std::cos(theta)) *
                    smooth_sign(theta_dot, p.v_epsilon);
  if (std::abs(theta_dot) < p.v_epsilon) friction *= p.stiction_ratio;
  return cable - friction;
}

PlantState plant_step(const PlantState& state, double u,
                      const PlantParams& p) {
  if (!std::isfinite(state.theta) || !std::isfinite(state.theta_dot) ||
      !std::isfinite(u)) {
    throw std::runtime_error("plant_step: non-finite state or input");
  }
  const PhysicalParams& tp = p.true_physical;
  const double m_eff = inertia(tp);
  if (!(m_eff > 0.0)) {
    throw std::invalid_argument("plant_step: effective inertia must be > 0");
  }
  const int steps = std::max(1, p.substeps);
  const double h = p.ts / steps;
  const double u_clip = std::clamp(u, -p.input_limit, p.input_limit);
  PlantState s = state;
  for (int i = 0; i < steps; ++i) {
    const double acc = (u_clip + parasitic_torque(s.theta, s.theta_dot, p) -
                        gravity_term(s.theta, tp, p.constants) -
                        tp.d * s.theta_dot) /
                       m_eff;
    s.theta_dot += h * acc;
    s.theta += h * s.theta_dot;
  }
  return s;
}

double pd_control(double e, double e_prev, const PDGains& gains, double ts) {
  if (!(ts > 0.0)) {
    throw std::invalid_argument("pd_control: ts must be > 0");
  }
  return gains.kp * e + gains.kd * (e - e_prev) / ts;
}

double quantize_encoder(double theta, double resolution) {
  if (resolution < 0.0) {
    throw std::invalid_argument("quantize_encoder: negative resolution");
  }
  if (resolution == 0.0) return theta;
  return std::round(theta / resolution) * resolution;
}

SimResult run_closed_loop(const Trajectory& traj, const PDGains& gains,
                          const PlantParams& p,
                          const Eigen::VectorXd* feedforward) {
  const Eigen::Index n = traj.size();
  if (n < 1) {
    throw std::invalid_argument("run_closed_loop: empty trajectory");
  }
  if (traj.ts != p.ts) {
    throw std::invalid_argument("run_closed_loop: trajectory/plant ts mismatch");
  }
  if (feedforward && feedforward->size() != n) {
    throw std::invalid_argument("run_closed_loop: feedforward length mismatch");
  }
  if (!(gains.kp > 0.0) || gains.kd < 0.0) {
    throw std::invalid_argument("run_closed_loop: need kp > 0 and kd >= 0");
  }

  SimResult sim;
  sim.ts = p.ts;
  sim.theta_d = traj.theta_d;
  sim.theta.resize(n);
  sim.theta_meas.resize(n);
  sim.u_ff.resize(n);
  sim.u_fb.resize(n);
  sim.u_applied.resize(n);
  sim.e.resize(n);

  PlantState state{traj.theta_d[0], traj.theta_d_dot[0]};
  double e_meas_prev = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    sim.theta[k] = state.theta;
    sim.theta_meas[k] = quantize_encoder(state.theta, p.encoder_resolution);
    sim.e[k] = traj.theta_d[k] - state.theta;
    const double e_meas = traj.theta_d[k] - sim.theta_meas[k];
    if (k == 0) e_meas_prev = e_meas;
    sim.u_fb[k] = pd_control(e_meas, e_meas_prev, gains, p.ts);
    e_meas_prev = e_meas;
    sim.u_ff[k] = feedforward ? (*feedforward)[k] : 0.0;
    sim.u_applied[k] =
        std::clamp(sim.u_ff[k] + sim.u_fb[k], -p.input_limit, p.input_limit);
    state = plant_step(state, sim.u_applied[k], p);
    if (!std::isfinite(state.theta) ||
        std::abs(state.theta) > p.divergence_bound) {
      throw std::runtime_error("run_closed_loop: state diverged at step " +
                               std::to_string(k));
    }
  }
  return sim;
}

IODataset to_io_dataset(const SimResult& sim) {
  return {sim.theta_meas, sim.u_applied, sim.ts};
}

Trajectory generate_reference(const std::vector<MoveSegment>& segments,
                              double ts, double start) {
  if (!(ts > 0.0)) {
    throw std::invalid_argument("generate_reference: ts must be > 0");
  }
  if (segments.empty()) {
    throw std::invalid_argument("generate_reference: no segments");
  }

  // Piecewise-constant-acceleration phases in global time.
  struct Phase {
    double t0, t1;  // [t0, t1)
    double p0, v0, a;
  };
  std::vector<Phase> phases;
  double t = 0.0;
  double pos = start;
  for (const MoveSegment& seg : segments) {
    if (seg.dwell < 0.0) {
      throw std::invalid_argument("generate_reference: negative dwell");
    }
    const double dist = seg.target - pos;
    if (dist != 0.0) {
      if (!(seg.vmax > 0.0) || !(seg.amax > 0.0)) {
        throw std::invalid_argument(
            "generate_reference: move needs positive vmax and amax");
      }
      const double dir = dist > 0.0 ? 1.0 : -1.0;
      const double d_abs = std::abs(dist);
      double ta = seg.vmax / seg.amax;  // ramp time
      double vpeak = seg.vmax;
      double tc = 0.0;  // cruise time
      if (seg.amax * ta * ta >= d_abs) {
        // Too short to reach vmax: triangular profile.
        ta = std::sqrt(d_abs / seg.amax);
        vpeak = seg.amax * ta;
      } else {
        tc = (d_abs - seg.amax * ta * ta) / seg.vmax;
      }
      phases.push_back({t, t + ta, pos, 0.0, dir * seg.amax});
      double p1 = pos + dir * 0.5 * seg.amax * ta * ta;
      if (tc > 0.0) {
        phases.push_back({t + ta, t + ta + tc, p1, dir * vpeak, 0.0});
        p1 += dir * vpeak * tc;
      }
      phases.push_back(
          {t + ta + tc, t + 2.0 * ta + tc, p1, dir * vpeak, -dir * seg.amax});
      t += 2.0 * ta + tc;
      pos = seg.target;
    }
    if (seg.dwell > 0.0) {
      phases.push_back({t, t + seg.dwell, pos, 0.0, 0.0});
      t += seg.dwell;
    }
  }
  if (phases.empty()) {
    throw std::invalid_argument("generate_reference: zero-duration spec");
  }

  const Eigen::Index n =
      static_cast<Eigen::Index>(std::floor(t / ts + 1e-9)) + 1;
  if (n < 2) {
    throw std::invalid_argument(
        "generate_reference: spec shorter than two samples");
  }
  Trajectory traj;
  traj.ts = ts;
  traj.theta_d.resize(n);
  traj.theta_d_dot.resize(n);
  traj.theta_d_ddot.resize(n);
  std::size_t pi = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double tk = static_cast<double>(k) * ts;
    while (pi + 1 < phases.size() && tk >= phases[pi].t1) ++pi;
    const Phase& ph = phases[pi];
    const double tau = std::min(tk, ph.t1) - ph.t0;
    traj.theta_d[k] = ph.p0 + ph.v0 * tau + 0.5 * ph.a * tau * tau;
    traj.theta_d_dot[k] = ph.v0 + ph.a * tau;
    traj.theta_d_ddot[k] = ph.a;
  }
  return traj;
}

PlantConfig read_plant_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  json doc = json::parse(in);
  PlantConfig cfg;
  const PlantParams defaults;
  const json pl = doc.value("plant", json::object());
  cfg.plant.true_physical.m = pl.value("m", defaults.true_physical.m);
  cfg.plant.true_physical.jxx = pl.value("jxx", defaults.true_physical.jxx);
  cfg.plant.true_physical.d = pl.value("d", defaults.true_physical.d);
  cfg.plant.true_physical.y = pl.value("y", defaults.true_physical.y);
  cfg.plant.true_physical.z = pl.value("z", defaults.true_physical.z);
  cfg.plant.constants.g = pl.value("g", defaults.constants.g);
  cfg.plant.constants.tilt = pl.value("tilt", defaults.constants.tilt);
  cfg.plant.cable_stiffness =
      pl.value("cable_stiffness", defaults.cable_stiffness);
  cfg.plant.cable_engage_angle =
      pl.value("cable_engage_angle", defaults.cable_engage_angle);
  cfg.plant.coulomb_base = pl.value("coulomb_base", defaults.coulomb_base);
  cfg.plant.coulomb_modulation =
      pl.value("coulomb_modulation", defaults.coulomb_modulation);
  cfg.plant.stiction_ratio =
      pl.value("stiction_ratio", defaults.stiction_ratio);
  cfg.plant.v_epsilon = pl.value("v_epsilon", defaults.v_epsilon);
  cfg.plant.input_limit = pl.value("input_limit", defaults.input_limit);
  cfg.plant.encoder_resolution =
      pl.value("encoder_resolution", defaults.encoder_resolution);
  cfg.plant.ts = pl.value("ts", defaults.ts);
  cfg.plant.substeps = pl.value("substeps", defaults.substeps);
  cfg.plant.divergence_bound =
      pl.value("divergence_bound", defaults.divergence_bound);
  const json gains = doc.value("gains", json::object());
  cfg.gains.kp = gains.value("kp", 0.0);
  cfg.gains.kd = gains.value("kd", 0.0);
  return cfg;
}

void write_plant_config(const PlantConfig& config,
                        const std::filesystem::path& path) {
  json doc;
  doc["format_version"] = 1;
  json pl;
  pl["m"] = config.plant.true_physical.m;
  pl["jxx"] = config.plant.true_physical.jxx;
  pl["d"] = config.plant.true_physical.d;
  pl["y"] = config.plant.true_physical.y;
  pl["z"] = config.plant.true_physical.z;
  pl["g"] = config.plant.constants.g;
  pl["tilt"] = config.plant.constants.tilt;
  pl["cable_stiffness"] = config.plant.cable_stiffness;
  pl["cable_engage_angle"] = config.plant.cable_engage_angle;
  pl["coulomb_base"] = config.plant.coulomb_base;
  pl["coulomb_modulation"] = config.plant.coulomb_modulation;
  pl["stiction_ratio"] = config.plant.stiction_ratio;
  pl["v_epsilon"] = config.plant.v_epsilon;
  pl["input_limit"] = config.plant.input_limit;
  pl["encoder_resolution"] = config.plant.encoder_resolution;
  pl["ts"] = config.plant.ts;
  pl["substeps"] = config.plant.substeps;
  pl["divergence_bound"] = config.plant.divergence_bound;
  doc["plant"] = std::move(pl);
  doc["gains"] = {{"kp", config.gains.kp}, {"kd", config.gains.kd}};
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << doc.dump(2) << '\n';
}

void write_sim_csv(const SimResult& sim, const std::filesystem::path& path) {
  for (const Eigen::VectorXd* col :
       {&sim.theta_d, &sim.theta, &sim.u_ff, &sim.u_fb, &sim.u_applied,
        &sim.e}) {
    if (!col->allFinite()) {
      throw std::invalid_argument("write_sim_csv: non-finite value");
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "k,theta_d,theta,u_ff,u_fb,u_applied,e\n";
  for (Eigen::Index k = 0; k < sim.size(); ++k) {
    out << k << ',' << format_double(sim.theta_d[k]) << ','
        << format_double(sim.theta[k]) << ',' << format_double(sim.u_ff[k])
        << ',' << format_double(sim.u_fb[k]) << ','
        << format_double(sim.u_applied[k]) << ',' << format_double(sim.e[k])
        << '\n';
  }
}

}  // namespace pgff
