#include "pgff/physical_model.hpp"

#include <cmath>

namespace pgff {

double inertia(const PhysicalParams& p) {
  return p.m * (p.y * p.y + p.z * p.z) + p.jxx;
}

double gravity_term(double theta, const PhysicalParams& p,
                    const PhysicalConstants& c) {
  return p.m * c.g * (p.y * std::cos(theta) - p.z * std::sin(theta)) *
         std::cos(c.tilt);
}

double f_m_sample(double theta, double theta_dot, double theta_ddot,
                  const PhysicalParams& p, const PhysicalConstants& c) {
  return inertia(p) * theta_ddot + gravity_term(theta, p, c) +
         p.d * theta_dot;
}

Eigen::VectorXd f_m(const Trajectory& traj, const PhysicalParams& p,
                    const PhysicalConstants& c) {
  const Eigen::Index n = traj.size();
  Eigen::VectorXd out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out[k] = f_m_sample(traj.theta_d[k], traj.theta_d_dot[k],
                        traj.theta_d_ddot[k], p, c);
  }
  return out;
}

Eigen::Vector3d basis_row(double theta, double theta_dot, double theta_ddot,
                          const Eigen::Vector2d& zeta_n,
                          const PhysicalConstants& c) {
  const double y = zeta_n[0];
  const double z = zeta_n[1];
  const double x1 = (y * y + z * z) * theta_ddot +
                    c.g * (y * std::cos(theta) - z * std::sin(theta)) *
                        std::cos(c.tilt);
  return {x1, theta_ddot, theta_dot};
}

Eigen::MatrixXd basis_matrix(const Eigen::Ref<const Eigen::VectorXd>& theta,
                             const Eigen::Ref<const Eigen::VectorXd>& theta_dot,
                             const Eigen::Ref<const Eigen::VectorXd>& theta_ddot,
                             const Eigen::Vector2d& zeta_n,
                             const PhysicalConstants& c) {
  const Eigen::Index n = theta.size();
  Eigen::MatrixXd x(n, 3);
  for (Eigen::Index k = 0; k < n; ++k) {
    x.row(k) = basis_row(theta[k], theta_dot[k], theta_ddot[k], zeta_n, c);
  }
  return x;
}

Eigen::MatrixXd basis_matrix(const Trajectory& traj,
                             const Eigen::Vector2d& zeta_n,
                             const PhysicalConstants& c) {
  return basis_matrix(traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot,
                      zeta_n, c);
}

Eigen::Matrix<double, 5, 1> f_m_gradient_sample(double theta, double theta_dot,
                                                double theta_ddot,
                                                const PhysicalParams& p,
                                                const PhysicalConstants& c) {
  const double ct = std::cos(c.tilt);
  const double cos_th = std::cos(theta);
  const double sin_th = std::sin(theta);
  Eigen::Matrix<double, 5, 1> grad;
  grad.head<3>() = basis_row(theta, theta_dot, theta_ddot, p.zeta_n(), c);
  grad[3] = 2.0 * p.m * p.y * theta_ddot + p.m * c.g * cos_th * ct;
  grad[4] = 2.0 * p.m * p.z * theta_ddot - p.m * c.g * sin_th * ct;
  return grad;
}

}  // namespace pgff
