// Time-series containers, reference differentiation, dataset splitting,
// performance norms and CSV I/O shared by all other modules.
#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <filesystem>
#include <string>

namespace pgff {

/// Reference trajectory sampled at a fixed period: position, velocity and
/// acceleration arrays of equal length.
struct Trajectory {
  Eigen::VectorXd theta_d;       // [rad]
  Eigen::VectorXd theta_d_dot;   // [rad/s]
  Eigen::VectorXd theta_d_ddot;  // [rad/s^2]
  double ts = 0.0;               // sample period [s]

  Eigen::Index size() const { return theta_d.size(); }
};

/// Paired (realized angle, required input) samples used for inverse
/// identification.
struct IODataset {
  Eigen::VectorXd theta;  // [rad]
  Eigen::VectorXd u_hat;  // [input units]
  double ts = 0.0;        // [s]

  Eigen::Index size() const { return theta.size(); }
};

/// Half-open index range [begin, end).
struct IndexRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index count() const { return end - begin; }
};

/// Contiguous train/validation/test partition of [0, N).
struct SplitIndices {
  IndexRange train;
  IndexRange validation;
  IndexRange test;
};

/// RMS, mean-absolute and max-absolute norms of a signal.
/// For any signal MA <= RMS <= inf-norm.
struct ErrorNorms {
  double rms = 0.0;
  double ma = 0.0;
  double inf = 0.0;
};

/// Differentiates a sampled reference with second-order stencils: central
/// differences at interior samples, one-sided at the endpoints. Exact for
/// polynomials up to degree two at interior samples.
/// Throws std::invalid_argument for fewer than 3 samples or ts <= 0.
Trajectory differentiate_reference(const Eigen::VectorXd& theta_d, double ts);

/// Splits N samples into contiguous train/validation/test blocks in temporal
/// order. Block sizes are floor(f_train*N), floor(f_val*N) and the remainder.
/// Throws std::invalid_argument if fractions are invalid or any block would
/// be empty.
SplitIndices split_dataset(Eigen::Index n, double f_train, double f_val,
                           double f_test);
SplitIndices split_dataset(const IODataset& ds, double f_train, double f_val,
                           double f_test);

/// Throws std::invalid_argument on an empty signal.
ErrorNorms error_norms(const Eigen::Ref<const Eigen::VectorXd>& s);

// CSV I/O. Numbers are written with std::to_chars (shortest representation
// that round-trips bit-exactly, '.' decimal separator, no locale dependence).
// Readers reject malformed rows, wrong headers and non-finite values with an
// error that names the offending line. The sample period is not part of the
// file format and is supplied by the caller on read.
void write_dataset_csv(const IODataset& ds, const std::filesystem::path& path);
IODataset read_dataset_csv(const std::filesystem::path& path, double ts = 0.0);
void write_trajectory_csv(const Trajectory& traj,
                          const std::filesystem::path& path);
Trajectory read_trajectory_csv(const std::filesystem::path& path,
                               double ts = 0.0);

/// Locale-independent shortest round-trip formatting of a double.
std::string format_double(double v);

}  // namespace pgff
