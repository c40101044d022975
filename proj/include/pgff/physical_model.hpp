// First-principles roll-axis model: feedforward evaluation and the
// basis-function matrix the output-space regularizer is built from.
#pragma once

#include <Eigen/Core>

#include "pgff/signals.hpp"

namespace pgff {

/// Physical parameters zeta = [m, jxx, d, y, z]. The model output is linear
/// in zeta_l = [m, jxx, d] for fixed zeta_n = [y, z].
struct PhysicalParams {
  double m = 0.0;    // mass [kg]
  double jxx = 0.0;  // moment of inertia [kg m^2]
  double d = 0.0;    // viscous damping [N m s/rad]
  double y = 0.0;    // center-of-mass offset [m]
  double z = 0.0;    // center-of-mass offset [m]

  Eigen::Vector3d zeta_l() const { return {m, jxx, d}; }
  Eigen::Vector2d zeta_n() const { return {y, z}; }
  Eigen::Matrix<double, 5, 1> zeta() const { return {m, jxx, d, y, z}; }

  static PhysicalParams from_zeta(const Eigen::Matrix<double, 5, 1>& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }
};

/// Fixed constants of the setup. `tilt` is the known orientation of the roll
/// axis out of the vertical plane.
struct PhysicalConstants {
  double g = 9.81;    // [m/s^2]
  double tilt = 0.0;  // [rad]
};

/// Effective inertia M = m (y^2 + z^2) + J_xx.
double inertia(const PhysicalParams& p);

/// Gravity torque H(theta) = m g (y cos(theta) - z sin(theta)) cos(tilt).
double gravity_term(double theta, const PhysicalParams& p,
                    const PhysicalConstants& c);

/// Physical-model feedforward f_M(k) = M ddtheta(k) + H(theta(k)) +
/// d dtheta(k), evaluated per sample.
Eigen::VectorXd f_m(const Trajectory& traj, const PhysicalParams& p,
                    const PhysicalConstants& c);
double f_m_sample(double theta, double theta_dot, double theta_ddot,
                  const PhysicalParams& p, const PhysicalConstants& c);

/// Basis row [x1, x2, x3] with x1 = (y^2+z^2) ddtheta +
/// g (y cos(theta) - z sin(theta)) cos(tilt), x2 = ddtheta, x3 = dtheta,
/// so that f_M = [x1 x2 x3] . [m, jxx, d].
Eigen::Vector3d basis_row(double theta, double theta_dot, double theta_ddot,
                          const Eigen::Vector2d& zeta_n,
                          const PhysicalConstants& c);

/// Stacks basis_row over all samples: N x 3.
Eigen::MatrixXd basis_matrix(const Trajectory& traj,
                             const Eigen::Vector2d& zeta_n,
                             const PhysicalConstants& c);
Eigen::MatrixXd basis_matrix(
    const Eigen::Ref<const Eigen::VectorXd>& theta,
    const Eigen::Ref<const Eigen::VectorXd>& theta_dot,
    const Eigen::Ref<const Eigen::VectorXd>& theta_ddot,
    const Eigen::Vector2d& zeta_n, const PhysicalConstants& c);

/// Analytic gradient of one f_M sample with respect to zeta = [m,jxx,d,y,z]:
///   d f_M / d zeta_l = basis_row,
///   d f_M / d y = 2 m y ddtheta + m g cos(theta) cos(tilt),
///   d f_M / d z = 2 m z ddtheta - m g sin(theta) cos(tilt).
Eigen::Matrix<double, 5, 1> f_m_gradient_sample(double theta, double theta_dot,
                                                double theta_ddot,
                                                const PhysicalParams& p,
                                                const PhysicalConstants& c);

}  // namespace pgff
