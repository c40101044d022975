#include "pgff/neural_net.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pgff/rng.hpp"

namespace pgff {

namespace {

using json = nlohmann::json;

void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::kTanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::kSigmoid:
      z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      break;
    case Activation::kRelu:
      z = z.array().max(0.0).matrix();
      break;
    case Activation::kLinear:
      break;
  }
}

// Derivative expressed in terms of the activation output h = sigma(z).
Eigen::MatrixXd activation_derivative(Activation a,
                                      const Eigen::MatrixXd& h) {
  switch (a) {
    case Activation::kTanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::kSigmoid:
      return (h.array() * (1.0 - h.array())).matrix();
    case Activation::kRelu:
      return (h.array() > 0.0).cast<double>().matrix();
    case Activation::kLinear:
      return Eigen::MatrixXd::Ones(h.rows(), h.cols());
  }
  return {};
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kSigmoid:
      return "sigmoid";
    case Activation::kRelu:
      return "relu";
    case Activation::kLinear:
      return "linear";
  }
  return "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "relu") return Activation::kRelu;
  if (name == "linear") return Activation::kLinear;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

double relay_step(double x, RelayState& state, double deadband) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument("relay_step: non-finite input");
  }
  if (x > deadband) {
    state.last_output = 1.0;
  } else if (x < -deadband) {
    state.last_output = -1.0;
  }
  // else hold previous output
  return state.last_output;
}

FeatureSet transform(const Trajectory& traj, double relay_deadband) {
  const Eigen::Index n = traj.size();
  FeatureSet fs;
  fs.ts = traj.ts;
  fs.x.resize(4, n);
  RelayState relay;
  for (Eigen::Index k = 0; k < n; ++k) {
    fs.x(0, k) = traj.theta_d[k];
    fs.x(1, k) = traj.theta_d_dot[k];
    fs.x(2, k) = traj.theta_d_ddot[k];
    fs.x(3, k) = relay_step(traj.theta_d_dot[k], relay, relay_deadband);
  }
  return fs;
}

FeatureSet transform_measured(const IODataset& ds, double relay_deadband) {
  return transform(differentiate_reference(ds.theta, ds.ts), relay_deadband);
}

std::vector<Eigen::Index> MLPParams::layer_sizes() const {
  std::vector<Eigen::Index> sizes;
  sizes.push_back(weights.empty() ? 0 : weights.front().cols());
  for (const auto& w : weights) sizes.push_back(w.rows());
  return sizes;
}

Eigen::Index MLPParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

void MLPParams::validate() const {
  if (weights.empty()) {
    throw std::invalid_argument("MLPParams: no layers");
  }
  if (biases.size() + 1 != weights.size()) {
    throw std::invalid_argument(
        "MLPParams: expected one bias per hidden layer");
  }
  if (weights.front().cols() != 4) {
    throw std::invalid_argument("MLPParams: input dimension must be 4");
  }
  if (weights.back().rows() != 1) {
    throw std::invalid_argument("MLPParams: output dimension must be 1");
  }
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    if (weights[l + 1].cols() != weights[l].rows()) {
      throw std::invalid_argument("MLPParams: layer dimension mismatch at " +
                                  std::to_string(l));
    }
    if (biases[l].size() != weights[l].rows()) {
      throw std::invalid_argument("MLPParams: bias dimension mismatch at " +
                                  std::to_string(l));
    }
  }
  for (const auto& w : weights) {
    if (!w.allFinite()) {
      throw std::invalid_argument("MLPParams: non-finite weight");
    }
  }
  for (const auto& b : biases) {
    if (!b.allFinite()) {
      throw std::invalid_argument("MLPParams: non-finite bias");
    }
  }
  if (!(norm_scale.array() != 0.0).all()) {
    throw std::invalid_argument("MLPParams: zero normalization scale");
  }
}

MLPGrad MLPGrad::zeros_like(const MLPParams& p) {
  MLPGrad g;
  g.weights.reserve(p.weights.size());
  for (const auto& w : p.weights) {
    g.weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  g.biases.reserve(p.biases.size());
  for (const auto& b : p.biases) {
    g.biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
  }
  return g;
}

MLPParams init_params(const std::vector<Eigen::Index>& layer_sizes,
                      std::uint64_t seed, Activation activation) {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("init_params: need at least input and output");
  }
  for (Eigen::Index s : layer_sizes) {
    if (s < 1) {
      throw std::invalid_argument("init_params: zero-sized layer");
    }
  }
  if (layer_sizes.back() != 1) {
    throw std::invalid_argument("init_params: output layer size must be 1");
  }

  MLPParams p;
  p.activation = activation;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const Eigen::Index fan_in = layer_sizes[l];
    const Eigen::Index fan_out = layer_sizes[l + 1];
    const double limit =
        std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < fan_out; ++i) {
      for (Eigen::Index j = 0; j < fan_in; ++j) {
        w(i, j) = rng.uniform(-limit, limit);
      }
    }
    p.weights.push_back(std::move(w));
    if (l + 2 < layer_sizes.size()) {
      p.biases.emplace_back(Eigen::VectorXd::Zero(fan_out));
    }
  }
  p.validate();
  return p;
}

ForwardCache forward_cached(const MLPParams& p, const FeatureSet& xs) {
  const std::size_t L = p.hidden_layers();
  ForwardCache cache;
  cache.input =
      p.norm_scale.cwiseInverse().asDiagonal() * (xs.x.colwise() - p.norm_mean);
  cache.hidden.resize(L);
  const Eigen::MatrixXd* h = &cache.input;
  for (std::size_t l = 0; l < L; ++l) {
    cache.hidden[l] = (p.weights[l] * (*h)).colwise() + p.biases[l];
    apply_activation(p.activation, cache.hidden[l]);
    h = &cache.hidden[l];
  }
  cache.output = (p.weights[L] * (*h)).transpose();
  return cache;
}

Eigen::VectorXd forward_batch(const MLPParams& p, const FeatureSet& xs) {
  return forward_cached(p, xs).output;
}

double forward(const MLPParams& p, const Eigen::Vector4d& x) {
  FeatureSet fs;
  fs.x = x;
  return forward_batch(p, fs)[0];
}

MLPGrad backward_from_cache(const MLPParams& p, const ForwardCache& cache,
                            const Eigen::Ref<const Eigen::VectorXd>& output_cotangent) {
  const std::size_t L = p.hidden_layers();
  if (output_cotangent.size() != cache.output.size()) {
    throw std::invalid_argument("backward: cotangent length mismatch");
  }
  MLPGrad g;
  g.weights.resize(L + 1);
  g.biases.resize(L);

  // Output layer: g_phi = W^L h^L, no bias.
  const Eigen::MatrixXd& h_last = L > 0 ? cache.hidden[L - 1] : cache.input;
  g.weights[L] = output_cotangent.transpose() * h_last.transpose();
  if (L == 0) return g;

  // delta: cotangent with respect to the pre-activation of each hidden layer.
  Eigen::MatrixXd delta =
      (p.weights[L].transpose() * output_cotangent.transpose())
          .cwiseProduct(activation_derivative(p.activation, h_last));
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::MatrixXd& h_prev = l > 0 ? cache.hidden[l - 1] : cache.input;
    g.weights[l] = delta * h_prev.transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (p.weights[l].transpose() * delta)
                  .cwiseProduct(
                      activation_derivative(p.activation, cache.hidden[l - 1]));
    }
  }
  return g;
}

MLPGrad backward(const MLPParams& p, const FeatureSet& xs,
                 const Eigen::Ref<const Eigen::VectorXd>& output_cotangent) {
  return backward_from_cache(p, forward_cached(p, xs), output_cotangent);
}

Eigen::VectorXd flatten(const MLPParams& p) {
  Eigen::VectorXd v(p.parameter_count());
  Eigen::Index at = 0;
  for (const auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) v[at++] = w(i, j);
    }
  }
  for (const auto& b : p.biases) {
    v.segment(at, b.size()) = b;
    at += b.size();
  }
  return v;
}

Eigen::VectorXd flatten(const MLPGrad& g) {
  Eigen::Index n = 0;
  for (const auto& w : g.weights) n += w.size();
  for (const auto& b : g.biases) n += b.size();
  Eigen::VectorXd v(n);
  Eigen::Index at = 0;
  for (const auto& w : g.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) v[at++] = w(i, j);
    }
  }
  for (const auto& b : g.biases) {
    v.segment(at, b.size()) = b;
    at += b.size();
  }
  return v;
}

void unflatten_into(const Eigen::Ref<const Eigen::VectorXd>& v, MLPParams& p) {
  if (v.size() != p.parameter_count()) {
    throw std::invalid_argument("unflatten_into: size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = v[at++];
    }
  }
  for (auto& b : p.biases) {
    b = v.segment(at, b.size());
    at += b.size();
  }
}

void save_model(const MLPParams& p, const std::filesystem::path& path) {
  p.validate();
  json doc;
  doc["format_version"] = 1;
  doc["layer_sizes"] = p.layer_sizes();
  doc["activation"] = to_string(p.activation);
  doc["norm_mean"] = std::vector<double>(p.norm_mean.data(),
                                         p.norm_mean.data() + 4);
  doc["norm_scale"] = std::vector<double>(p.norm_scale.data(),
                                          p.norm_scale.data() + 4);
  doc["relay_deadband"] = p.relay_deadband;
  json weights = json::array();
  for (const auto& w : p.weights) {
    json flat = json::array();
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) flat.push_back(w(i, j));
    }
    weights.push_back(std::move(flat));
  }
  doc["weights"] = std::move(weights);
  json biases = json::array();
  for (const auto& b : p.biases) {
    biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  }
  doc["biases"] = std::move(biases);

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << doc.dump(2) << '\n';
}

MLPParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  json doc = json::parse(in);
  if (doc.at("format_version").get<int>() != 1) {
    throw std::runtime_error(path.string() + ": unsupported format_version");
  }
  MLPParams p;
  p.activation = activation_from_string(doc.at("activation").get<std::string>());
  const auto sizes = doc.at("layer_sizes").get<std::vector<Eigen::Index>>();
  const auto mean = doc.at("norm_mean").get<std::vector<double>>();
  const auto scale = doc.at("norm_scale").get<std::vector<double>>();
  if (mean.size() != 4 || scale.size() != 4) {
    throw std::runtime_error(path.string() + ": normalization must have 4 entries");
  }
  for (int i = 0; i < 4; ++i) {
    p.norm_mean[i] = mean[i];
    p.norm_scale[i] = scale[i];
  }
  p.relay_deadband = doc.value("relay_deadband", 0.0);

  const json& weights = doc.at("weights");
  const json& biases = doc.at("biases");
  if (sizes.size() < 2 || weights.size() + 1 != sizes.size()) {
    throw std::runtime_error(path.string() + ": inconsistent layer_sizes");
  }
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Eigen::Index rows = sizes[l + 1];
    const Eigen::Index cols = sizes[l];
    const auto flat = weights.at(l).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
      throw std::runtime_error(path.string() + ": weight size mismatch");
    }
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = flat[i * cols + j];
    }
    p.weights.push_back(std::move(w));
  }
  for (const auto& b : biases) {
    const auto vals = b.get<std::vector<double>>();
    p.biases.push_back(Eigen::Map<const Eigen::VectorXd>(
        vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  p.validate();
  return p;
}

}  // namespace pgff
