#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "feudalgain/rng.hpp"

namespace feudalgain::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh, identity };
/// `sample` draws fresh noise for noisy layers; `mean` uses the noise-free weights.
enum class NoiseMode { sample, mean };

/// A trainable tensor and its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix* value = nullptr;
  Matrix* grad = nullptr;
  bool non_negative = false;  // projected onto [0, inf) after each step
};

/// Per-layer values recorded during a training forward pass.
struct LayerRecord {
  Matrix input;
  Matrix pre;
  Matrix output;
  Vector noise_in;   // f(eps_in), noisy layers only
  Vector noise_out;  // f(eps_out)
};

class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng);

  Matrix forward(const Matrix& x, NoiseMode mode, Rng* rng, LayerRecord* rec) const;
  Matrix backward(const Matrix& grad_out, const LayerRecord& rec);
  void collect(std::vector<Parameter>& out, const std::string& prefix);
  void zero_grad();

  std::size_t in_dim() const { return static_cast<std::size_t>(w_.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w_.rows()); }
  Activation activation() const { return act_; }
  Matrix& weight() { return w_; }
  Matrix& bias() { return b_; }

  nlohmann::json to_json() const;
  static DenseLayer from_json(const nlohmann::json& j);

 private:
  Matrix w_, b_, gw_, gb_;
  Activation act_ = Activation::identity;
};

/// Linear layer whose weights are mu + sigma * eps with factorised Gaussian eps.
class NoisyLayer {
 public:
  NoisyLayer() = default;
  NoisyLayer(std::size_t in, std::size_t out, Activation act, Rng& rng, double sigma0 = 0.5);

  Matrix forward(const Matrix& x, NoiseMode mode, Rng* rng, LayerRecord* rec) const;
  Matrix backward(const Matrix& grad_out, const LayerRecord& rec);
  void collect(std::vector<Parameter>& out, const std::string& prefix);
  void zero_grad();

  std::size_t in_dim() const { return static_cast<std::size_t>(w_mu_.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w_mu_.rows()); }
  Activation activation() const { return act_; }
  Matrix& weight_mu() { return w_mu_; }
  Matrix& weight_sigma() { return w_sigma_; }
  Matrix& bias_mu() { return b_mu_; }
  Matrix& bias_sigma() { return b_sigma_; }

  nlohmann::json to_json() const;
  static NoisyLayer from_json(const nlohmann::json& j);

 private:
  Matrix w_mu_, w_sigma_, b_mu_, b_sigma_;
  Matrix gw_mu_, gw_sigma_, gb_mu_, gb_sigma_;
  Activation act_ = Activation::identity;
};

using Layer = std::variant<DenseLayer, NoisyLayer>;

enum class Head {
  q_values,              // one linear output per action
  dueling,               // Q = V + A - mean(A)
  policy_logits_plus_q,  // [logits; Q] stacked, n each
};

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t outputs = 0;  // actions
  Head head = Head::q_values;
  bool noisy = false;
  Activation activation = Activation::relu;
  double sigma0 = 0.5;
};

/// Records of one training forward pass; consumed by Network::backward.
struct Tape {
  std::vector<LayerRecord> trunk;
  std::vector<LayerRecord> heads;
  bool valid = false;
};

Vector dueling_combine(double value, const Vector& advantages);

/// Feed-forward chain with a configurable output head. Inputs and outputs are
/// column-major batches: one column per sample.
class Network {
 public:
  Network() = default;
  Network(const NetworkSpec& spec, Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  /// Rows of the output matrix (2n for policy_logits_plus_q).
  std::size_t output_dim() const;

  /// Inference; thread-safe for `mean` mode.
  Matrix predict(const Matrix& x, NoiseMode mode = NoiseMode::mean, Rng* rng = nullptr) const;
  /// Training pass; records everything backward needs into `tape`.
  Matrix forward(const Matrix& x, NoiseMode mode, Rng* rng, Tape& tape) const;
  /// Accumulates parameter gradients for dLoss/dOutput = grad_out.
  void backward(const Tape& tape, const Matrix& grad_out);

  void zero_grad();
  std::vector<Parameter> parameters();
  std::size_t parameter_count();

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

 private:
  Matrix run(const Matrix& x, NoiseMode mode, Rng* rng, Tape* tape) const;

  NetworkSpec spec_;
  std::vector<Layer> trunk_;
  std::vector<Layer> heads_;  // q_values: [out]; dueling: [value, advantage]; policy: [logits, q]
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  /// Applies one bias-corrected adaptive-moment update. Throws
  /// std::runtime_error naming the parameter when a gradient is not finite.
  void step(std::vector<Parameter> params);
  void step(Network& net) { step(net.parameters()); }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

std::string_view to_string(Activation a);

}  // namespace feudalgain::nn
