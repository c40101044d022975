// Synthetic stand-in for the roll axis: rigid-body dynamics plus
// ground-truth parasitic torques (one-sided cable spring, configuration-
// dependent friction), encoder quantization, input saturation, PD feedback
// and closed-loop execution with optional feedforward.
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <numbers>
#include <vector>

#include "pgff/physical_model.hpp"
#include "pgff/signals.hpp"

namespace pgff {

struct PlantParams {
  PhysicalParams true_physical{30.0, 5.0, 0.5, 0.05, 0.02};
  PhysicalConstants constants;       // gravity and tilt of the ground truth
  double cable_stiffness = 3.0;      // k_c [N m/rad]
  double cable_engage_angle = -1.0;  // theta_c [rad]; cable slack above it
  double coulomb_base = 0.8;         // c0 [N m]
  double coulomb_modulation = 0.3;   // c1 [N m], |c1| <= c0
  double stiction_ratio = 1.5;       // rho_s >= 1, applied for |dtheta| < v_eps
  double v_epsilon = 1e-3;           // friction boundary-layer velocity [rad/s]
  double input_limit = 5.0;          // [input units]
  double encoder_resolution = 0.0119 * std::numbers::pi / 180.0;  // [rad]
  double ts = 1.0 / 500.0;           // [s]
  int substeps = 1;                  // integrator substeps per sample period
  double divergence_bound = 1e3;     // |theta| abort threshold [rad]
};

struct PDGains {
  double kp = 0.0;  // [input/rad]
  double kd = 0.0;  // [input s/rad]
};

struct PlantState {
  double theta = 0.0;      // [rad]
  double theta_dot = 0.0;  // [rad/s]
};

/// Closed-loop record. theta is the realized angle; theta_meas the quantized
/// encoder reading the feedback acted on; e = theta_d - theta.
struct SimResult {
  Eigen::VectorXd theta_d;
  Eigen::VectorXd theta;
  Eigen::VectorXd theta_meas;
  Eigen::VectorXd u_ff;
  Eigen::VectorXd u_fb;
  Eigen::VectorXd u_applied;  // clip(u_ff + u_fb)
  Eigen::VectorXd e;
  double ts = 0.0;

  Eigen::Index size() const { return theta.size(); }
};

/// Ground-truth parasitic torque acting on the body:
///   tau = -k_c min(theta - theta_c, 0)
///         - (c0 + c1 cos(theta)) * rho(theta_dot) * tanh(theta_dot / v_eps)
/// where rho is the stiction multiplier inside the boundary layer. The
/// cable term pushes back toward the slack region; the friction term
/// opposes the velocity.
double parasitic_torque(double theta, double theta_dot, const PlantParams& p);

/// One sample period of the ground-truth plant under zero-order-hold input:
///   ddtheta = (clip(u) + tau_par - H(theta) - d dtheta) / M
/// integrated by semi-implicit Euler (substeps microsteps of ts).
/// Throws on non-finite state or non-positive effective inertia.
PlantState plant_step(const PlantState& state, double u, const PlantParams& p);

/// Discrete PD law kp * e + kd * (e - e_prev) / ts.
double pd_control(double e, double e_prev, const PDGains& gains, double ts);

/// round(theta / resolution) * resolution; resolution 0 disables.
double quantize_encoder(double theta, double resolution);

/// Simulates the two-degree-of-freedom loop over the trajectory: per sample
/// the encoder is read, the PD acts on the measured error, the optional
/// precomputed feedforward array is added, and the sum is clipped and held
/// for one period. Starts at theta = theta_d(0) with theta_d_dot(0).
/// Throws with the step index if |theta| exceeds the divergence bound.
SimResult run_closed_loop(const Trajectory& traj, const PDGains& gains,
                          const PlantParams& p,
                          const Eigen::VectorXd* feedforward = nullptr);

/// Training dataset view of a run: (measured angle, applied input).
IODataset to_io_dataset(const SimResult& sim);

/// Point-to-point move: trapezoidal velocity profile to the absolute target
/// under the given limits, followed by a dwell.
struct MoveSegment {
  double target = 0.0;  // [rad]
  double vmax = 0.0;    // [rad/s]
  double amax = 0.0;    // [rad/s^2]
  double dwell = 0.0;   // hold after the move [s]
};

/// Concatenates trapezoidal moves (starting from the first segment's
/// implied start angle `start`) into one sampled trajectory with analytic
/// position/velocity/acceleration. Velocity is continuous; acceleration is
/// piecewise constant within the limits. Throws on non-positive limits for
/// a nonzero move or negative dwell.
Trajectory generate_reference(const std::vector<MoveSegment>& segments,
                              double ts, double start = 0.0);

/// Plant + feedback-gain configuration file (JSON).
struct PlantConfig {
  PlantParams plant;
  PDGains gains;
};
PlantConfig read_plant_config(const std::filesystem::path& path);
void write_plant_config(const PlantConfig& config,
                        const std::filesystem::path& path);

/// Header `k,theta_d,theta,u_ff,u_fb,u_applied,e`.
void write_sim_csv(const SimResult& sim, const std::filesystem::path& path);

}  // namespace pgff
