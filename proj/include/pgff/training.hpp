// Parameter estimation for the parallel feedforward controller: the
// physical-only baseline fit, the orthonormal output-space basis U1, the
// least-squares / OP-regularized criteria with exact gradients, and the
// ADAM training loop with minibatching and early stopping.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgff/neural_net.hpp"
#include "pgff/physical_model.hpp"
#include "pgff/signals.hpp"

namespace pgff {

/// Orthonormal basis of the column space of the basis-function matrix
/// X_zeta_n, evaluated at the zeta_n it was built from.
struct ProjectionBasis {
  Eigen::MatrixXd u1;  // N x r, orthonormal columns
  Eigen::Index r = 0;
  Eigen::Vector2d zeta_n0 = Eigen::Vector2d::Zero();
};

/// Rank-revealing orthonormal basis of the column space of x (SVD; singular
/// values below 1e-10 * sigma_max are treated as zero). An all-zero matrix
/// yields r = 0. Only the projector u1*u1' is meaningful; the particular
/// basis is not.
ProjectionBasis compute_basis(const Eigen::MatrixXd& x);

/// Grid specification for the zeta_n = [y, z] search in fit_physical_only,
/// plus the optional joint refinement of all five parameters.
struct GridSearchSpec {
  double y_min = -0.2;
  double y_max = 0.2;
  Eigen::Index y_count = 41;
  double z_min = -0.2;
  double z_max = 0.2;
  Eigen::Index z_count = 41;
  // Joint 5-parameter ADAM refinement from the grid winner; the refined
  // point is kept only if it improves the residual, and zeta_l is always
  // re-solved in closed form at the final zeta_n.
  bool refine = false;
  Eigen::Index refine_steps = 300;
  double refine_learning_rate = 1e-3;
};

struct PhysicalFitResult {
  PhysicalParams params;
  double residual_sq = 0.0;  // sum of squared residuals at the fit
  bool degenerate = false;   // X rank-deficient; zeta_l is minimum-norm
};

/// Closed-form solve of min_{zeta_l} ||u_hat - x*zeta_l||^2: normal
/// equations with a relative ridge floor of 1e-12 when x has full column
/// rank, SVD minimum-norm solution (and *degenerate = true) otherwise.
Eigen::Vector3d solve_zeta_l(const Eigen::MatrixXd& x,
                             const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                             bool* degenerate = nullptr);

/// Physical-only baseline: grid over zeta_n with the closed-form zeta_l
/// solve per candidate, returning the minimum-residual pair. m, jxx, d >= 0
/// is enforced (exact nonnegative solve when the unconstrained optimum is
/// infeasible). Derivatives of theta come from differentiate_reference.
PhysicalFitResult fit_physical_only(const IODataset& ds,
                                    const PhysicalConstants& c,
                                    const GridSearchSpec& search);

/// Same fit on pre-built feature columns. The train operation initializes
/// from this with its own feature rows, so the baseline and the training
/// criterion see identical derivative samples.
PhysicalFitResult fit_physical_features(
    const Eigen::Ref<const Eigen::VectorXd>& u_hat, const FeatureSet& features,
    const PhysicalConstants& c, const GridSearchSpec& search);

/// Loss values at one parameter point. j_op = j_ls + lambda * r_op holds
/// exactly; the subspace terms decompose j_ls when a basis is supplied
/// (u2 term computed as ||rho||^2 - ||u1' rho||^2, never via U2).
struct LossReport {
  double j_ls = 0.0;
  double r_op = 0.0;
  double j_op = 0.0;
  double u1_residual_sq = 0.0;
  double u2_residual_sq = 0.0;
};

/// Sum of squared residuals u_hat - (f_M + g_phi) over the feature columns,
/// with the subspace decomposition and R(phi) filled in when a basis is
/// supplied. f_M is evaluated on the first three feature rows.
LossReport loss_report(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                       const FeatureSet& features, const PhysicalParams& zeta,
                       const MLPParams& phi, const PhysicalConstants& c,
                       double lambda = 0.0,
                       const ProjectionBasis* basis = nullptr);

/// R(phi) = ||u1' g_phi(features)||^2 over the sample set the basis was
/// built on. Throws on row-count mismatch.
double r_op(const MLPParams& phi, const FeatureSet& features,
            const ProjectionBasis& basis);

/// Gradient of J_OP = J_LS + lambda * R with respect to zeta = [m, jxx, d,
/// y, z] and every network parameter, over one common sample set. The basis
/// is frozen: R contributes nothing to grad zeta.
struct TotalGradient {
  Eigen::Matrix<double, 5, 1> zeta = Eigen::Matrix<double, 5, 1>::Zero();
  MLPGrad phi;
};
TotalGradient total_gradient(const Eigen::Ref<const Eigen::VectorXd>& u_hat,
                             const FeatureSet& features,
                             const PhysicalParams& zeta, const MLPParams& phi,
                             const PhysicalConstants& c, double lambda = 0.0,
                             const ProjectionBasis* basis = nullptr);

/// Bias-corrected ADAM over a flat parameter vector.
struct AdamState {
  Eigen::VectorXd m;  // first moment
  Eigen::VectorXd v;  // second moment
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};
void adam_step(AdamState& state, const Eigen::Ref<const Eigen::VectorXd>& grad,
               double lr, Eigen::Ref<Eigen::VectorXd> params);

enum class RegularizerMode { kLeastSquares, kOrthogonalProjection };
std::string to_string(RegularizerMode mode);
RegularizerMode regularizer_mode_from_string(const std::string& name);

enum class ValidationCadence { kEveryMinibatch, kEveryEpoch };
enum class FeatureSource { kMeasured, kReference };
std::string to_string(FeatureSource src);
FeatureSource feature_source_from_string(const std::string& name);

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 1e-3;
  Eigen::Index batch_size = 64;
  Eigen::Index max_epochs = 500;
  int patience = 5;  // consecutive non-improving validation events
  std::uint64_t seed = 1;
  RegularizerMode mode = RegularizerMode::kOrthogonalProjection;
  ValidationCadence cadence = ValidationCadence::kEveryMinibatch;
  // 0 keeps the basis frozen at zeta_n0 for the whole run; k > 0 rebuilds
  // it from the current zeta_n every k epochs (experimentation knob).
  Eigen::Index basis_refresh_epochs = 0;
  // Exact mode evaluates R and its gradient over the full train set every
  // step; the approximation restricts it to the minibatch rows (scaled).
  bool r_op_exact = true;
  std::vector<Eigen::Index> hidden = {30, 30};
  Activation activation = Activation::kTanh;
  double f_train = 0.8;
  double f_val = 0.1;
  double f_test = 0.1;
  // Network/model inputs during training: derivatives of the measured
  // angles, or of the reference trajectory (requires one to be supplied).
  FeatureSource feature_source = FeatureSource::kMeasured;
  double relay_deadband = 0.0;
  GridSearchSpec physical_search;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// One optimizer step of the loss history. Losses are evaluated at the
/// parameters *before* the step's update (step 1 is the initialization);
/// val_loss is the validation-set J_LS at the same point, carried forward
/// between validation events.
struct HistoryRow {
  Eigen::Index step = 0;
  double j_ls = 0.0;
  double r_op = 0.0;
  double j_op = 0.0;
  double val_loss = 0.0;
};

/// Header `step,j_ls,r_op,j_op,val_loss`.
void write_history_csv(const std::vector<HistoryRow>& history,
                       const std::filesystem::path& path);

struct FitResult {
  PhysicalParams zeta;        // trained physical parameters
  MLPParams phi;              // trained network (best-validation snapshot)
  PhysicalParams zeta0;       // physical-only baseline used to initialize
  bool physical_fit_degenerate = false;
  ProjectionBasis basis;      // built at zeta_n0 on the train block
  std::vector<HistoryRow> history;
  double best_val_loss = 0.0;
  Eigen::Index best_step = 0;
  Eigen::Index steps_taken = 0;
  bool early_stopped = false;
};

/// Full training run: contiguous split, physical-only initialization of
/// zeta, Glorot initialization of phi, joint ADAM updates with per-epoch
/// minibatch shuffling, early stopping on validation J_LS, best-snapshot
/// restore. m, jxx and d are clamped at zero after every update. With
/// feature_source reference a trajectory of matching length must be given.
FitResult train(const IODataset& ds, const TrainConfig& config,
                const PhysicalConstants& c,
                const Trajectory* reference = nullptr);

/// zeta/metadata companion to the model JSON: trained zeta, the baseline
/// zeta0 and zeta_n0, mode, lambda, seed, split fractions, degeneracy flag,
/// stopping info.
void write_fit_json(const FitResult& fit, const TrainConfig& config,
                    const std::filesystem::path& path);

struct FitSummary {
  PhysicalParams zeta;
  PhysicalParams zeta0;
  Eigen::Vector2d zeta_n0 = Eigen::Vector2d::Zero();
  bool physical_fit_degenerate = false;
  RegularizerMode mode = RegularizerMode::kOrthogonalProjection;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  FeatureSource feature_source = FeatureSource::kMeasured;
  double relay_deadband = 0.0;
  double f_train = 0.8;
  double f_val = 0.1;
  double f_test = 0.1;
};
FitSummary read_fit_json(const std::filesystem::path& path);

/// Training configuration file; absent keys keep the defaults above.
TrainConfig read_train_config(const std::filesystem::path& path);
void write_train_config(const TrainConfig& config,
                        const std::filesystem::path& path);

}  // namespace pgff
