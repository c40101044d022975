#include "pgff/training.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "pgff/rng.hpp"

namespace pgff {

namespace {

using json = nlohmann::json;

// Relative singular-value cutoff for rank decisions.
constexpr double kRankTolerance = 1e-10;
// Relative ridge on the normal equations, guarding conditioning without
// biasing well-posed fits.
constexpr double kRidgeFloor = 1e-12;

double grid_point(double lo, double hi, Eigen::Index i, Eigen::Index count) {
  if (count == 1) return lo;
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
}

// Exact nonnegative least squares over the three zeta_l coefficients by
// support enumeration: the constrained optimum is the best reduced
// unconstrained solve among the 2^3 support sets that comes out feasible.
std::pair<Eigen::Vector3d, double> solve_zeta_l_nonneg(
    const Eigen::MatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& u_hat,
    const Eigen::Matrix3d& gram_ridged, const Eigen::Vector3d& xtu) {
  Eigen::Vector3d best = Eigen::Vector3d::Zero();
  double best_res = u_hat.squaredNorm();
  for (int mask = 1; mask < 8; ++mask) {
    std::array<int, 3> idx{};
    int count = 0;
    for (int i = 0; i < 3; ++i) {
      if (mask & (1 << i)) idx[count++] = i;
    }
    Eigen::MatrixXd a(count, count);
    Eigen::VectorXd b(count);
    for (int r = 0; r < count; ++r) {
      b[r] = xtu[idx[r]];
      for (int s = 0; s < count; ++s) a(r, s) = gram_ridged(idx[r], idx[s]);
    }
    const Eigen::VectorXd sol = a.ldlt().solve(b);
    if ((sol.array() < 0.0).any()) continue;
    Eigen::Vector3d zl = Eigen::Vector3d::Zero();
    for (int r = 0; r < count; ++r) zl[idx[r]] = sol[r];
    const double res = (u_hat - x * zl).squaredNorm();
    if (res < best_res) {
      best_res = res;
      best = zl;
    }
  }
  return {best, best_res};
}

// Grid search over zeta_n with the closed-form zeta_l solve per candidate,
// on caller-supplied derivative arrays (measured or reference, the caller
// decides). m, jxx, d >= 0 is enforced: candidates whose unconstrained
// solution goes negative fall back to the exact nonnegative solve. The
// winner is re-solved with solve_zeta_l for the degeneracy flag.
PhysicalFitResult fit_grid(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                           const Eigen::VectorXd& theta,
                           const Eigen::VectorXd& theta_dot,
                           const Eigen::VectorXd& theta_ddot,
                           const PhysicalConstants& c,
                           const GridSearchSpec& search) {
  const Eigen::Index n = u_hat.size();
  if (theta.size() != n || theta_dot.size() != n || theta_ddot.size() != n) {
    throw std::invalid_argument("fit_grid: array length mismatch");
  }
  if (search.y_count < 1 || search.z_count < 1) {
    throw std::invalid_argument("fit_grid: empty search grid");
  }

  const double cos_tilt = std::cos(c.tilt);
  const Eigen::VectorXd cos_t = theta.array().cos();
  const Eigen::VectorXd sin_t = theta.array().sin();

  Eigen::MatrixXd x(n, 3);
  x.col(1) = theta_ddot;
  x.col(2) = theta_dot;

  double best_res = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best_zn = Eigen::Vector2d::Zero();
  for (Eigen::Index iy = 0; iy < search.y_count; ++iy) {
    const double y = grid_point(search.y_min, search.y_max, iy, search.y_count);
    for (Eigen::Index iz = 0; iz < search.z_count; ++iz) {
      const double z =
          grid_point(search.z_min, search.z_max, iz, search.z_count);
      x.col(0) = (y * y + z * z) * theta_ddot +
                 (c.g * cos_tilt) * (y * cos_t - z * sin_t);
      Eigen::Matrix3d a = x.transpose() * x;
      const Eigen::Vector3d xtu = x.transpose() * u_hat;
      const double scale = a.trace();
      a.diagonal().array() += kRidgeFloor * (scale > 0.0 ? scale : 1.0);
      const Eigen::Vector3d zl = a.ldlt().solve(xtu);
      const double res = zl.minCoeff() >= 0.0
                             ? (u_hat - x * zl).squaredNorm()
                             : solve_zeta_l_nonneg(x, u_hat, a, xtu).second;
      if (res < best_res) {
        best_res = res;
        best_zn = {y, z};
      }
    }
  }

  // Re-solve at the winner: solve_zeta_l for the degeneracy flag, then the
  // constrained solve if the unconstrained solution is infeasible.
  auto solve_at = [&](const Eigen::Vector2d& zn, bool* degenerate) {
    x.col(0) = (zn[0] * zn[0] + zn[1] * zn[1]) * theta_ddot +
               (c.g * cos_tilt) * (zn[0] * cos_t - zn[1] * sin_t);
    Eigen::Vector3d zl = solve_zeta_l(x, u_hat, degenerate);
    double res = (u_hat - x * zl).squaredNorm();
    if (zl.minCoeff() < 0.0) {
      Eigen::Matrix3d a = x.transpose() * x;
      const Eigen::Vector3d xtu = x.transpose() * u_hat;
      const double scale = a.trace();
      a.diagonal().array() += kRidgeFloor * (scale > 0.0 ? scale : 1.0);
      std::tie(zl, res) = solve_zeta_l_nonneg(x, u_hat, a, xtu);
    }
    return std::pair<Eigen::Vector3d, double>(zl, res);
  };

  PhysicalFitResult result;
  bool degenerate = false;
  auto [zl, res_win] = solve_at(best_zn, &degenerate);
  result.params = {zl[0], zl[1], zl[2], best_zn[0], best_zn[1]};
  result.residual_sq = res_win;
  result.degenerate = degenerate;

  if (search.refine && search.refine_steps > 0 && !degenerate) {
    // Joint 5-parameter ADAM descent from the grid winner; kept only if the
    // closed-form re-solve at the refined zeta_n improves the residual.
    Eigen::VectorXd p = result.params.zeta();
    AdamState adam;
    for (Eigen::Index it = 0; it < search.refine_steps; ++it) {
      const PhysicalParams zp = PhysicalParams::from_zeta(p);
      Eigen::Matrix<double, 5, 1> grad = Eigen::Matrix<double, 5, 1>::Zero();
      for (Eigen::Index k = 0; k < n; ++k) {
        const double rho =
            u_hat[k] - f_m_sample(theta[k], theta_dot[k], theta_ddot[k], zp, c);
        grad += (-2.0 * rho) * f_m_gradient_sample(theta[k], theta_dot[k],
                                                   theta_ddot[k], zp, c);
      }
      adam_step(adam, grad, search.refine_learning_rate, p);
      p.head<3>() = p.head<3>().cwiseMax(0.0);
    }
    bool refined_degenerate = false;
    const Eigen::Vector2d zn_ref(p[3], p[4]);
    const auto [zl_ref, res_ref] = solve_at(zn_ref, &refined_degenerate);
    if (!refined_degenerate && res_ref < result.residual_sq) {
      result.params = {zl_ref[0], zl_ref[1], zl_ref[2], zn_ref[0], zn_ref[1]};
      result.residual_sq = res_ref;
    }
  }
  return result;
}

double f_m_feature_sample(const FeatureSet& features, Eigen::Index k,
                          const PhysicalParams& zeta,
                          const PhysicalConstants& c) {
  return f_m_sample(features.x(0, k), features.x(1, k), features.x(2, k), zeta,
                    c);
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

}  // namespace

ProjectionBasis compute_basis(const Eigen::MatrixXd& x) {
  if (x.rows() < 3) {
    throw std::invalid_argument("compute_basis: need at least 3 rows");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? kRankTolerance * s[0] : 0.0;
  Eigen::Index r = 0;
  while (r < s.size() && s[r] > cutoff) ++r;
  ProjectionBasis basis;
  basis.r = r;
  basis.u1 = svd.matrixU().leftCols(r);
  return basis;
}

Eigen::Vector3d solve_zeta_l(const Eigen::MatrixXd& x,
                             const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                             bool* degenerate) {
  if (x.cols() != 3 || x.rows() != u_hat.size()) {
    throw std::invalid_argument("solve_zeta_l: shape mismatch");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s[0];
  Eigen::Index rank = 0;
  while (rank < s.size() && s[rank] > kRankTolerance * smax) ++rank;
  if (rank < 3) {
    if (degenerate) *degenerate = true;
    Eigen::Vector3d zl = Eigen::Vector3d::Zero();
    for (Eigen::Index i = 0; i < rank; ++i) {
      zl += svd.matrixV().col(i) * (svd.matrixU().col(i).dot(u_hat) / s[i]);
    }
    return zl;
  }
  if (degenerate) *degenerate = false;
  Eigen::Matrix3d a = x.transpose() * x;
  a.diagonal().array() += kRidgeFloor * smax * smax;
  return a.ldlt().solve(x.transpose() * u_hat);
}

PhysicalFitResult fit_physical_only(const IODataset& ds,
                                    const PhysicalConstants& c,
                                    const GridSearchSpec& search) {
  if (ds.size() < 4) {
    throw std::invalid_argument("fit_physical_only: need at least 4 samples");
  }
  const Trajectory traj = differentiate_reference(ds.theta, ds.ts);
  return fit_grid(ds.u_hat, traj.theta_d, traj.theta_d_dot, traj.theta_d_ddot,
                  c, search);
}

PhysicalFitResult fit_physical_features(
    const Eigen::Ref<const Eigen::VectorXd>& u_hat, const FeatureSet& features,
    const PhysicalConstants& c, const GridSearchSpec& search) {
  return fit_grid(u_hat, features.x.row(0).transpose(),
                  features.x.row(1).transpose(),
                  features.x.row(2).transpose(), c, search);
}

LossReport loss_report(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                       const FeatureSet& features, const PhysicalParams& zeta,
                       const MLPParams& phi, const PhysicalConstants& c,
                       double lambda, const ProjectionBasis* basis) {
  const Eigen::Index n = features.size();
  if (u_hat.size() != n) {
    throw std::invalid_argument("loss_report: length mismatch");
  }
  const Eigen::VectorXd g = forward_batch(phi, features);
  Eigen::VectorXd rho(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    rho[k] = u_hat[k] - f_m_feature_sample(features, k, zeta, c) - g[k];
  }
  LossReport rep;
  rep.j_ls = rho.squaredNorm();
  if (basis) {
    if (basis->u1.rows() != n) {
      throw std::invalid_argument("loss_report: basis rows do not match");
    }
    rep.u1_residual_sq = (basis->u1.transpose() * rho).squaredNorm();
    // U2 is never materialized: ||U2' rho||^2 = ||rho||^2 - ||U1' rho||^2.
    rep.u2_residual_sq = std::max(0.0, rep.j_ls - rep.u1_residual_sq);
    rep.r_op = (basis->u1.transpose() * g).squaredNorm();
  }
  rep.j_op = rep.j_ls + lambda * rep.r_op;
  return rep;
}

double r_op(const MLPParams& phi, const FeatureSet& features,
            const ProjectionBasis& basis) {
  if (basis.u1.rows() != features.size()) {
    throw std::invalid_argument("r_op: basis rows do not match feature count");
  }
  if (basis.r == 0) return 0.0;
  return (basis.u1.transpose() * forward_batch(phi, features)).squaredNorm();
}

TotalGradient total_gradient(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                             const FeatureSet& features,
                             const PhysicalParams& zeta, const MLPParams& phi,
                             const PhysicalConstants& c, double lambda,
                             const ProjectionBasis* basis) {
  const Eigen::Index n = features.size();
  if (u_hat.size() != n) {
    throw std::invalid_argument("total_gradient: length mismatch");
  }
  const ForwardCache cache = forward_cached(phi, features);
  Eigen::VectorXd cot(n);
  TotalGradient out;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double rho =
        u_hat[k] - f_m_feature_sample(features, k, zeta, c) - cache.output[k];
    cot[k] = -2.0 * rho;
    out.zeta += (-2.0 * rho) * f_m_gradient_sample(features.x(0, k),
                                                   features.x(1, k),
                                                   features.x(2, k), zeta, c);
  }
  if (lambda != 0.0) {
    if (!basis) {
      throw std::invalid_argument("total_gradient: lambda > 0 needs a basis");
    }
    if (basis->u1.rows() != n) {
      throw std::invalid_argument("total_gradient: basis rows do not match");
    }
    if (basis->r > 0) {
      cot += (2.0 * lambda) *
             (basis->u1 * (basis->u1.transpose() * cache.output));
    }
  }
  out.phi = backward_from_cache(phi, cache, cot);
  return out;
}

void adam_step(AdamState& state, const Eigen::Ref<const Eigen::VectorXd>& grad,
               double lr, Eigen::Ref<Eigen::VectorXd> params) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient/parameter size mismatch");
  }
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(grad.size());
    state.v = Eigen::VectorXd::Zero(grad.size());
  }
  if (state.m.size() != grad.size()) {
    throw std::invalid_argument("adam_step: state size mismatch");
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v.array() =
      state.beta2 * state.v.array() + (1.0 - state.beta2) * grad.array().square();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + state.epsilon);
}

std::string to_string(RegularizerMode mode) {
  return mode == RegularizerMode::kLeastSquares ? "least_squares"
                                                : "orthogonal_projection";
}

RegularizerMode regularizer_mode_from_string(const std::string& name) {
  if (name == "least_squares" || name == "ls") {
    return RegularizerMode::kLeastSquares;
  }
  if (name == "orthogonal_projection" || name == "op") {
    return RegularizerMode::kOrthogonalProjection;
  }
  throw std::invalid_argument("unknown regularizer mode '" + name + "'");
}

std::string to_string(FeatureSource src) {
  return src == FeatureSource::kMeasured ? "measured" : "reference";
}

FeatureSource feature_source_from_string(const std::string& name) {
  if (name == "measured") return FeatureSource::kMeasured;
  if (name == "reference") return FeatureSource::kReference;
  throw std::invalid_argument("unknown feature source '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  }
  if (max_epochs < 1) {
    throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
  }
  if (patience < 1) {
    throw std::invalid_argument("TrainConfig: patience must be >= 1");
  }
  if (basis_refresh_epochs < 0) {
    throw std::invalid_argument("TrainConfig: basis_refresh_epochs < 0");
  }
  if (!(relay_deadband >= 0.0)) {
    throw std::invalid_argument("TrainConfig: relay_deadband must be >= 0");
  }
  for (Eigen::Index h : hidden) {
    if (h < 1) throw std::invalid_argument("TrainConfig: zero-sized layer");
  }
}

void write_history_csv(const std::vector<HistoryRow>& history,
                       const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "step,j_ls,r_op,j_op,val_loss\n";
  for (const HistoryRow& row : history) {
    out << row.step << ',' << format_double(row.j_ls) << ','
        << format_double(row.r_op) << ',' << format_double(row.j_op) << ','
        << format_double(row.val_loss) << '\n';
  }
}

FitResult train(const IODataset& ds, const TrainConfig& config,
                const PhysicalConstants& c, const Trajectory* reference) {
  config.validate();
  const Eigen::Index n = ds.size();
  const SplitIndices split =
      split_dataset(n, config.f_train, config.f_val, config.f_test);

  // Features over the whole record, then sliced per block, so that the
  // difference stencils and the relay state see the same samples
  // independently of where the split boundaries fall.
  FeatureSet all;
  if (config.feature_source == FeatureSource::kMeasured) {
    all = transform_measured(ds, config.relay_deadband);
  } else {
    if (!reference) {
      throw std::invalid_argument(
          "train: feature_source reference requires a reference trajectory");
    }
    if (reference->size() != n) {
      throw std::invalid_argument(
          "train: reference length does not match dataset");
    }
    if (reference->ts != ds.ts) {
      throw std::invalid_argument("train: reference/dataset ts mismatch");
    }
    all = transform(*reference, config.relay_deadband);
  }

  const FeatureSet train_f = all.block(split.train.begin, split.train.count());
  const FeatureSet val_f =
      all.block(split.validation.begin, split.validation.count());
  const Eigen::VectorXd train_u =
      ds.u_hat.segment(split.train.begin, split.train.count());
  const Eigen::VectorXd val_u =
      ds.u_hat.segment(split.validation.begin, split.validation.count());
  const Eigen::Index n_train = train_f.size();

  // Physical-only initialization, fitted on the same train-block features
  // the training criterion uses.
  const Eigen::VectorXd theta_tr = train_f.x.row(0).transpose();
  const Eigen::VectorXd theta_dot_tr = train_f.x.row(1).transpose();
  const Eigen::VectorXd theta_ddot_tr = train_f.x.row(2).transpose();
  const PhysicalFitResult fit0 = fit_grid(train_u, theta_tr, theta_dot_tr,
                                          theta_ddot_tr, c,
                                          config.physical_search);

  // Input normalization from train-set statistics; the relay row passes
  // through untouched.
  std::vector<Eigen::Index> sizes;
  sizes.push_back(4);
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(1);
  MLPParams phi = init_params(sizes, config.seed, config.activation);
  for (int i = 0; i < 3; ++i) {
    const double mean = train_f.x.row(i).mean();
    const double sd = std::sqrt(
        (train_f.x.row(i).array() - mean).square().sum() /
        static_cast<double>(n_train));
    phi.norm_mean[i] = mean;
    phi.norm_scale[i] = sd > 1e-12 ? sd : 1.0;
  }
  phi.relay_deadband = config.relay_deadband;

  auto build_basis = [&](const Eigen::Vector2d& zn) {
    ProjectionBasis b = compute_basis(
        basis_matrix(theta_tr, theta_dot_tr, theta_ddot_tr, zn, c));
    b.zeta_n0 = zn;
    return b;
  };
  ProjectionBasis basis = build_basis(fit0.params.zeta_n());

  const double lambda_eff =
      config.mode == RegularizerMode::kOrthogonalProjection ? config.lambda
                                                            : 0.0;

  // Flat parameter vector [zeta; phi] driven by one ADAM state.
  const Eigen::Index n_phi = phi.parameter_count();
  Eigen::VectorXd params(5 + n_phi);
  params.head<5>() = fit0.params.zeta();
  params.tail(n_phi) = flatten(phi);
  PhysicalParams zeta = fit0.params;

  AdamState adam;
  Rng shuffle_rng(config.seed ^ 0x517cc1b727220a95ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  FitResult result;
  result.zeta0 = fit0.params;
  result.physical_fit_degenerate = fit0.degenerate;

  auto validation_loss = [&]() {
    return loss_report(val_u, val_f, zeta, phi, c).j_ls;
  };

  Eigen::VectorXd best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  Eigen::Index best_step = 0;
  int bad_events = 0;
  Eigen::Index step = 0;
  double last_val = validation_loss();
  bool stopped = false;

  Eigen::VectorXd rho(n_train);
  Eigen::VectorXd grad_flat(5 + n_phi);

  for (Eigen::Index epoch = 1; epoch <= config.max_epochs && !stopped;
       ++epoch) {
    if (config.basis_refresh_epochs > 0 && epoch > 1 &&
        (epoch - 1) % config.basis_refresh_epochs == 0) {
      basis = build_basis(zeta.zeta_n());
    }
    shuffle_rng.shuffle(order);

    for (Eigen::Index start = 0; start < n_train && !stopped;
         start += config.batch_size) {
      const Eigen::Index b = std::min(config.batch_size, n_train - start);
      const double scale_ls =
          static_cast<double>(n_train) / static_cast<double>(b);
      ++step;

      double j_ls_value = 0.0;
      double r_value = 0.0;
      Eigen::Matrix<double, 5, 1> grad_zeta =
          Eigen::Matrix<double, 5, 1>::Zero();
      MLPGrad grad_phi;

      if (config.r_op_exact) {
        // One forward pass over the full train set serves the exact R, the
        // history losses and (through its batch columns) the J_LS gradient.
        const ForwardCache cache = forward_cached(phi, train_f);
        for (Eigen::Index k = 0; k < n_train; ++k) {
          rho[k] = train_u[k] - f_m_feature_sample(train_f, k, zeta, c) -
                   cache.output[k];
        }
        j_ls_value = rho.squaredNorm();
        Eigen::VectorXd cot = Eigen::VectorXd::Zero(n_train);
        for (Eigen::Index i = 0; i < b; ++i) {
          const Eigen::Index k = order[static_cast<std::size_t>(start + i)];
          cot[k] = -2.0 * scale_ls * rho[k];
          grad_zeta += (-2.0 * scale_ls * rho[k]) *
                       f_m_gradient_sample(train_f.x(0, k), train_f.x(1, k),
                                           train_f.x(2, k), zeta, c);
        }
        if (basis.r > 0) {
          const Eigen::VectorXd proj = basis.u1.transpose() * cache.output;
          r_value = proj.squaredNorm();
          if (lambda_eff != 0.0) {
            cot += (2.0 * lambda_eff) * (basis.u1 * proj);
          }
        }
        grad_phi = backward_from_cache(phi, cache, cot);
      } else {
        // Batch-row approximation: J_LS, R and their gradients from the
        // minibatch rows only, scaled up to full-train-set magnitude.
        FeatureSet batch_f;
        batch_f.ts = train_f.ts;
        batch_f.x.resize(4, b);
        Eigen::VectorXd batch_u(b);
        Eigen::MatrixXd u1_b(b, basis.r);
        for (Eigen::Index i = 0; i < b; ++i) {
          const Eigen::Index k = order[static_cast<std::size_t>(start + i)];
          batch_f.x.col(i) = train_f.x.col(k);
          batch_u[i] = train_u[k];
          if (basis.r > 0) u1_b.row(i) = basis.u1.row(k);
        }
        const ForwardCache cache = forward_cached(phi, batch_f);
        Eigen::VectorXd rho_b(b);
        for (Eigen::Index i = 0; i < b; ++i) {
          rho_b[i] = batch_u[i] - f_m_feature_sample(batch_f, i, zeta, c) -
                     cache.output[i];
          grad_zeta += (-2.0 * scale_ls * rho_b[i]) *
                       f_m_gradient_sample(batch_f.x(0, i), batch_f.x(1, i),
                                           batch_f.x(2, i), zeta, c);
        }
        j_ls_value = scale_ls * rho_b.squaredNorm();
        Eigen::VectorXd cot = -2.0 * scale_ls * rho_b;
        if (basis.r > 0) {
          const Eigen::VectorXd proj = u1_b.transpose() * cache.output;
          r_value = scale_ls * proj.squaredNorm();
          if (lambda_eff != 0.0) {
            cot += (2.0 * lambda_eff * scale_ls) * (u1_b * proj);
          }
        }
        grad_phi = backward_from_cache(phi, cache, cot);
      }

      if (!std::isfinite(j_ls_value) || !std::isfinite(r_value)) {
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(step) +
                                 " (diverged learning rate?)");
      }

      const bool event =
          config.cadence == ValidationCadence::kEveryMinibatch || start == 0;
      if (event) {
        last_val = validation_loss();
        if (!std::isfinite(last_val)) {
          throw std::runtime_error("train: non-finite validation loss at step " +
                                   std::to_string(step));
        }
        if (last_val < best_val) {
          best_val = last_val;
          best_params = params;
          best_step = step;
          bad_events = 0;
        } else if (++bad_events >= config.patience) {
          stopped = true;
        }
      }

      result.history.push_back({step, j_ls_value, r_value,
                                j_ls_value + lambda_eff * r_value, last_val});
      if (stopped) break;

      grad_flat.head<5>() = grad_zeta;
      grad_flat.tail(n_phi) = flatten(grad_phi);
      adam_step(adam, grad_flat, config.learning_rate, params);
      // Projected step: m, jxx, d are physical quantities, kept nonnegative.
      params.head<3>() = params.head<3>().cwiseMax(0.0);
      zeta = PhysicalParams::from_zeta(params.head<5>());
      unflatten_into(params.tail(n_phi), phi);
    }
  }

  // Best-validation snapshot restore.
  params = best_params;
  zeta = PhysicalParams::from_zeta(params.head<5>());
  unflatten_into(params.tail(n_phi), phi);

  result.zeta = zeta;
  result.phi = phi;
  result.basis = std::move(basis);
  result.best_val_loss = best_val;
  result.best_step = best_step;
  result.steps_taken = step;
  result.early_stopped = stopped;
  return result;
}

void write_fit_json(const FitResult& fit, const TrainConfig& config,
                    const std::filesystem::path& path) {
  json doc;
  doc["format_version"] = 1;
  doc["zeta"] = std::vector<double>{fit.zeta.m, fit.zeta.jxx, fit.zeta.d,
                                    fit.zeta.y, fit.zeta.z};
  doc["zeta0"] = std::vector<double>{fit.zeta0.m, fit.zeta0.jxx, fit.zeta0.d,
                                     fit.zeta0.y, fit.zeta0.z};
  doc["zeta_n0"] =
      std::vector<double>{fit.basis.zeta_n0[0], fit.basis.zeta_n0[1]};
  doc["physical_fit_degenerate"] = fit.physical_fit_degenerate;
  doc["mode"] = to_string(config.mode);
  doc["lambda"] = config.lambda;
  doc["seed"] = config.seed;
  doc["feature_source"] = to_string(config.feature_source);
  doc["relay_deadband"] = config.relay_deadband;
  doc["fractions"] =
      std::vector<double>{config.f_train, config.f_val, config.f_test};
  doc["best_val_loss"] = fit.best_val_loss;
  doc["best_step"] = fit.best_step;
  doc["steps_taken"] = fit.steps_taken;
  doc["early_stopped"] = fit.early_stopped;
  write_json_file(doc, path);
}

FitSummary read_fit_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  json doc = json::parse(in);
  if (doc.at("format_version").get<int>() != 1) {
    throw std::runtime_error(path.string() + ": unsupported format_version");
  }
  auto read_zeta = [&](const char* key) {
    const auto v = doc.at(key).get<std::vector<double>>();
    if (v.size() != 5) {
      throw std::runtime_error(path.string() + ": bad " + key);
    }
    return PhysicalParams{v[0], v[1], v[2], v[3], v[4]};
  };
  FitSummary summary;
  summary.zeta = read_zeta("zeta");
  summary.zeta0 = read_zeta("zeta0");
  const auto zn = doc.at("zeta_n0").get<std::vector<double>>();
  if (zn.size() != 2) {
    throw std::runtime_error(path.string() + ": bad zeta_n0");
  }
  summary.zeta_n0 = {zn[0], zn[1]};
  summary.physical_fit_degenerate =
      doc.at("physical_fit_degenerate").get<bool>();
  summary.mode = regularizer_mode_from_string(doc.at("mode").get<std::string>());
  summary.lambda = doc.at("lambda").get<double>();
  summary.seed = doc.at("seed").get<std::uint64_t>();
  summary.feature_source =
      feature_source_from_string(doc.at("feature_source").get<std::string>());
  summary.relay_deadband = doc.at("relay_deadband").get<double>();
  const auto fr = doc.at("fractions").get<std::vector<double>>();
  if (fr.size() != 3) {
    throw std::runtime_error(path.string() + ": bad fractions");
  }
  summary.f_train = fr[0];
  summary.f_val = fr[1];
  summary.f_test = fr[2];
  return summary;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  json doc = json::parse(in);
  TrainConfig cfg;
  cfg.lambda = doc.value("lambda", cfg.lambda);
  cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  cfg.max_epochs = doc.value("max_epochs", cfg.max_epochs);
  cfg.patience = doc.value("patience", cfg.patience);
  cfg.seed = doc.value("seed", cfg.seed);
  if (doc.contains("mode")) {
    cfg.mode = regularizer_mode_from_string(doc.at("mode").get<std::string>());
  }
  if (doc.contains("cadence")) {
    const auto name = doc.at("cadence").get<std::string>();
    if (name == "every_minibatch") {
      cfg.cadence = ValidationCadence::kEveryMinibatch;
    } else if (name == "every_epoch") {
      cfg.cadence = ValidationCadence::kEveryEpoch;
    } else {
      throw std::runtime_error(path.string() + ": unknown cadence '" + name +
                               "'");
    }
  }
  cfg.basis_refresh_epochs =
      doc.value("basis_refresh_epochs", cfg.basis_refresh_epochs);
  cfg.r_op_exact = doc.value("r_op_exact", cfg.r_op_exact);
  if (doc.contains("hidden")) {
    cfg.hidden = doc.at("hidden").get<std::vector<Eigen::Index>>();
  }
  if (doc.contains("activation")) {
    cfg.activation =
        activation_from_string(doc.at("activation").get<std::string>());
  }
  if (doc.contains("fractions")) {
    const auto fr = doc.at("fractions").get<std::vector<double>>();
    if (fr.size() != 3) {
      throw std::runtime_error(path.string() + ": fractions must have 3 entries");
    }
    cfg.f_train = fr[0];
    cfg.f_val = fr[1];
    cfg.f_test = fr[2];
  }
  if (doc.contains("feature_source")) {
    cfg.feature_source =
        feature_source_from_string(doc.at("feature_source").get<std::string>());
  }
  cfg.relay_deadband = doc.value("relay_deadband", cfg.relay_deadband);
  if (doc.contains("physical_search")) {
    const json& gs = doc.at("physical_search");
    GridSearchSpec& s = cfg.physical_search;
    s.y_min = gs.value("y_min", s.y_min);
    s.y_max = gs.value("y_max", s.y_max);
    s.y_count = gs.value("y_count", s.y_count);
    s.z_min = gs.value("z_min", s.z_min);
    s.z_max = gs.value("z_max", s.z_max);
    s.z_count = gs.value("z_count", s.z_count);
    s.refine = gs.value("refine", s.refine);
    s.refine_steps = gs.value("refine_steps", s.refine_steps);
    s.refine_learning_rate =
        gs.value("refine_learning_rate", s.refine_learning_rate);
  }
  cfg.validate();
  return cfg;
}

void write_train_config(const TrainConfig& config,
                        const std::filesystem::path& path) {
  json doc;
  doc["lambda"] = config.lambda;
  doc["learning_rate"] = config.learning_rate;
  doc["batch_size"] = config.batch_size;
  doc["max_epochs"] = config.max_epochs;
  doc["patience"] = config.patience;
  doc["seed"] = config.seed;
  doc["mode"] = to_string(config.mode);
  doc["cadence"] = config.cadence == ValidationCadence::kEveryMinibatch
                       ? "every_minibatch"
                       : "every_epoch";
  doc["basis_refresh_epochs"] = config.basis_refresh_epochs;
  doc["r_op_exact"] = config.r_op_exact;
  doc["hidden"] = config.hidden;
  doc["activation"] = to_string(config.activation);
  doc["fractions"] =
      std::vector<double>{config.f_train, config.f_val, config.f_test};
  doc["feature_source"] = to_string(config.feature_source);
  doc["relay_deadband"] = config.relay_deadband;
  json gs;
  gs["y_min"] = config.physical_search.y_min;
  gs["y_max"] = config.physical_search.y_max;
  gs["y_count"] = config.physical_search.y_count;
  gs["z_min"] = config.physical_search.z_min;
  gs["z_max"] = config.physical_search.z_max;
  gs["z_count"] = config.physical_search.z_count;
  gs["refine"] = config.physical_search.refine;
  gs["refine_steps"] = config.physical_search.refine_steps;
  gs["refine_learning_rate"] = config.physical_search.refine_learning_rate;
  doc["physical_search"] = std::move(gs);
  write_json_file(doc, path);
}

}  // namespace pgff
