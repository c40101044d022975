// Complementary learner: physics-guided input transform (with relay
// hysteresis state) feeding a fully connected MLP, plus exact
// backpropagation for all parameters.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgff/signals.hpp"

namespace pgff {

enum class Activation { kTanh, kSigmoid, kRelu, kLinear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Relay with memory: sign of the input, holding the previous output while
/// the input is exactly zero. Initial output is 0.
struct RelayState {
  double last_output = 0.0;  // in {-1, 0, +1}
};

/// Output in {-1, 0, +1}; updates the state. Throws on non-finite input.
/// Inputs with |x| <= deadband are treated as zero (hold); default 0 keeps
/// the strict trichotomy.
double relay_step(double x, RelayState& state, double deadband = 0.0);

/// Per-sample feature vectors [theta, dtheta, ddtheta, relay(dtheta)] stored
/// as columns of a 4 x N matrix. The relay state is threaded sequentially
/// over k, so construction is order-dependent through the relay channel.
struct FeatureSet {
  Eigen::MatrixXd x;  // 4 x N, raw (unnormalized) features
  double ts = 0.0;

  Eigen::Index size() const { return x.cols(); }
  FeatureSet block(Eigen::Index begin, Eigen::Index count) const {
    return {x.middleCols(begin, count), ts};
  }
};

/// Physics-guided input transformation applied to a reference trajectory.
FeatureSet transform(const Trajectory& traj, double relay_deadband = 0.0);

/// Same transform with derivatives built from measured angles via
/// differentiate_reference.
FeatureSet transform_measured(const IODataset& ds, double relay_deadband = 0.0);

/// MLP g_phi: L hidden layers with bias and activation, linear output layer
/// without bias. Inputs are affinely normalized with stored per-feature
/// mean/scale (identity by default, relay channel always passes through).
struct MLPParams {
  std::vector<Eigen::MatrixXd> weights;  // W^0 .. W^L
  std::vector<Eigen::VectorXd> biases;   // b^1 .. b^L (hidden layers only)
  Activation activation = Activation::kTanh;
  Eigen::Vector4d norm_mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d norm_scale = Eigen::Vector4d::Ones();
  double relay_deadband = 0.0;

  std::size_t hidden_layers() const { return biases.size(); }
  std::vector<Eigen::Index> layer_sizes() const;
  Eigen::Index parameter_count() const;

  /// Throws std::invalid_argument if the dimension chain is broken.
  void validate() const;
};

/// Gradient with the same shape as MLPParams.
struct MLPGrad {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MLPGrad zeros_like(const MLPParams& p);
};

/// Glorot-uniform weights, zero biases; deterministic under seed.
/// layer_sizes runs [input, hidden..., 1]; all sizes must be >= 1 and the
/// output size must be 1.
MLPParams init_params(const std::vector<Eigen::Index>& layer_sizes,
                      std::uint64_t seed,
                      Activation activation = Activation::kTanh);

/// Single-sample forward pass.
double forward(const MLPParams& p, const Eigen::Vector4d& x);

/// Elementwise forward over all feature columns.
Eigen::VectorXd forward_batch(const MLPParams& p, const FeatureSet& xs);

/// Forward pass keeping hidden activations for reuse by backward.
struct ForwardCache {
  Eigen::MatrixXd input;                 // normalized input, 4 x N
  std::vector<Eigen::MatrixXd> hidden;   // h^1 .. h^L
  Eigen::VectorXd output;                // g_phi per column
};
ForwardCache forward_cached(const MLPParams& p, const FeatureSet& xs);

/// Exact gradient of sum_k cotangent(k) * g_phi(x_k) with respect to every
/// weight and bias.
MLPGrad backward(const MLPParams& p, const FeatureSet& xs,
                 const Eigen::Ref<const Eigen::VectorXd>& output_cotangent);
MLPGrad backward_from_cache(const MLPParams& p, const ForwardCache& cache,
                            const Eigen::Ref<const Eigen::VectorXd>& output_cotangent);

// Flat parameter vector view (weights row-major, then biases, layer order).
// Used by the optimizer and by finite-difference checks.
Eigen::VectorXd flatten(const MLPParams& p);
Eigen::VectorXd flatten(const MLPGrad& g);
void unflatten_into(const Eigen::Ref<const Eigen::VectorXd>& v, MLPParams& p);

/// Versioned JSON model file with layer sizes, activation, normalization
/// constants and row-major weight/bias arrays.
void save_model(const MLPParams& p, const std::filesystem::path& path);
MLPParams load_model(const std::filesystem::path& path);

}  // namespace pgff
