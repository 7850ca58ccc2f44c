#include "feudalgain/neural.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace feudalgain::nn {

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

Matrix activate(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::tanh: return pre.array().tanh().matrix();
    case Activation::identity: return pre;
  }
  return pre;
}

Matrix activation_grad(const Matrix& grad_out, const LayerRecord& rec, Activation act) {
  switch (act) {
    case Activation::relu: return (rec.pre.array() > 0.0).select(grad_out, 0.0);
    case Activation::tanh: return (grad_out.array() * (1.0 - rec.output.array().square())).matrix();
    case Activation::identity: return grad_out;
  }
  return grad_out;
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::runtime_error("unknown activation '" + s + "'");
}

nlohmann::json matrix_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw std::runtime_error("matrix size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = flat[static_cast<std::size_t>(i * cols + j2)];
  }
  return m;
}

double scale_noise(double x) { return x >= 0.0 ? std::sqrt(x) : -std::sqrt(-x); }

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng) : act_(act) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w_ = uniform_matrix(out, in, bound, rng);
  b_ = uniform_matrix(out, 1, bound, rng);
  zero_grad();
}

Matrix DenseLayer::forward(const Matrix& x, NoiseMode, Rng*, LayerRecord* rec) const {
  if (static_cast<std::size_t>(x.rows()) != in_dim()) {
    throw std::invalid_argument("dense layer expects " + std::to_string(in_dim()) + " inputs, got " +
                                std::to_string(x.rows()));
  }
  Matrix pre = w_ * x;
  pre.colwise() += b_.col(0);
  Matrix out = activate(pre, act_);
  if (rec) {
    rec->input = x;
    rec->pre = std::move(pre);
    rec->output = out;
  }
  return out;
}

Matrix DenseLayer::backward(const Matrix& grad_out, const LayerRecord& rec) {
  const Matrix dpre = activation_grad(grad_out, rec, act_);
  gw_.noalias() += dpre * rec.input.transpose();
  gb_ += dpre.rowwise().sum();
  return w_.transpose() * dpre;
}

void DenseLayer::collect(std::vector<Parameter>& out, const std::string& prefix) {
  out.push_back({prefix + ".w", &w_, &gw_, false});
  out.push_back({prefix + ".b", &b_, &gb_, false});
}

void DenseLayer::zero_grad() {
  gw_ = Matrix::Zero(w_.rows(), w_.cols());
  gb_ = Matrix::Zero(b_.rows(), 1);
}

nlohmann::json DenseLayer::to_json() const {
  return {{"type", "dense"}, {"activation", to_string(act_)}, {"w", matrix_json(w_)}, {"b", matrix_json(b_)}};
}

DenseLayer DenseLayer::from_json(const nlohmann::json& j) {
  DenseLayer l;
  l.act_ = parse_activation(j.at("activation").get<std::string>());
  l.w_ = matrix_from_json(j.at("w"));
  l.b_ = matrix_from_json(j.at("b"));
  l.zero_grad();
  return l;
}

// ---------------------------------------------------------------------------

NoisyLayer::NoisyLayer(std::size_t in, std::size_t out, Activation act, Rng& rng, double sigma0) : act_(act) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w_mu_ = uniform_matrix(out, in, bound, rng);
  b_mu_ = uniform_matrix(out, 1, bound, rng);
  w_sigma_ = Matrix::Constant(out, in, sigma0 * bound);
  b_sigma_ = Matrix::Constant(out, 1, sigma0 * bound);
  zero_grad();
}

Matrix NoisyLayer::forward(const Matrix& x, NoiseMode mode, Rng* rng, LayerRecord* rec) const {
  if (static_cast<std::size_t>(x.rows()) != in_dim()) {
    throw std::invalid_argument("noisy layer expects " + std::to_string(in_dim()) + " inputs, got " +
                                std::to_string(x.rows()));
  }
  Matrix pre;
  Vector f_in, f_out;
  if (mode == NoiseMode::sample) {
    if (!rng) throw std::invalid_argument("noise sampling requires a random stream");
    f_in.resize(w_mu_.cols());
    f_out.resize(w_mu_.rows());
    for (Eigen::Index i = 0; i < f_in.size(); ++i) f_in(i) = scale_noise(rng->normal());
    for (Eigen::Index i = 0; i < f_out.size(); ++i) f_out(i) = scale_noise(rng->normal());
    const Matrix w = w_mu_ + w_sigma_.cwiseProduct(f_out * f_in.transpose());
    const Vector b = b_mu_.col(0) + b_sigma_.col(0).cwiseProduct(f_out);
    pre = w * x;
    pre.colwise() += b;
  } else {
    f_in = Vector::Zero(w_mu_.cols());
    f_out = Vector::Zero(w_mu_.rows());
    pre = w_mu_ * x;
    pre.colwise() += b_mu_.col(0);
  }
  Matrix out = activate(pre, act_);
  if (rec) {
    rec->input = x;
    rec->pre = std::move(pre);
    rec->output = out;
    rec->noise_in = std::move(f_in);
    rec->noise_out = std::move(f_out);
  }
  return out;
}

Matrix NoisyLayer::backward(const Matrix& grad_out, const LayerRecord& rec) {
  const Matrix dpre = activation_grad(grad_out, rec, act_);
  const Matrix eps = rec.noise_out * rec.noise_in.transpose();
  const Matrix gw = dpre * rec.input.transpose();
  const Vector gb = dpre.rowwise().sum();
  gw_mu_ += gw;
  gw_sigma_ += gw.cwiseProduct(eps);
  gb_mu_ += gb;
  gb_sigma_ += gb.cwiseProduct(rec.noise_out);
  const Matrix w = w_mu_ + w_sigma_.cwiseProduct(eps);
  return w.transpose() * dpre;
}

void NoisyLayer::collect(std::vector<Parameter>& out, const std::string& prefix) {
  out.push_back({prefix + ".w_mu", &w_mu_, &gw_mu_, false});
  out.push_back({prefix + ".w_sigma", &w_sigma_, &gw_sigma_, true});
  out.push_back({prefix + ".b_mu", &b_mu_, &gb_mu_, false});
  out.push_back({prefix + ".b_sigma", &b_sigma_, &gb_sigma_, true});
}

void NoisyLayer::zero_grad() {
  gw_mu_ = Matrix::Zero(w_mu_.rows(), w_mu_.cols());
  gw_sigma_ = Matrix::Zero(w_mu_.rows(), w_mu_.cols());
  gb_mu_ = Matrix::Zero(b_mu_.rows(), 1);
  gb_sigma_ = Matrix::Zero(b_mu_.rows(), 1);
}

nlohmann::json NoisyLayer::to_json() const {
  return {{"type", "noisy"},
          {"activation", to_string(act_)},
          {"w_mu", matrix_json(w_mu_)},
          {"w_sigma", matrix_json(w_sigma_)},
          {"b_mu", matrix_json(b_mu_)},
          {"b_sigma", matrix_json(b_sigma_)}};
}

NoisyLayer NoisyLayer::from_json(const nlohmann::json& j) {
  NoisyLayer l;
  l.act_ = parse_activation(j.at("activation").get<std::string>());
  l.w_mu_ = matrix_from_json(j.at("w_mu"));
  l.w_sigma_ = matrix_from_json(j.at("w_sigma"));
  l.b_mu_ = matrix_from_json(j.at("b_mu"));
  l.b_sigma_ = matrix_from_json(j.at("b_sigma"));
  l.zero_grad();
  return l;
}

// ---------------------------------------------------------------------------

Vector dueling_combine(double value, const Vector& advantages) {
  if (advantages.size() == 0) throw std::invalid_argument("dueling_combine: empty advantage vector");
  return (advantages.array() - advantages.mean() + value).matrix();
}

namespace {

Layer make_layer(std::size_t in, std::size_t out, Activation act, const NetworkSpec& spec, Rng& rng) {
  if (spec.noisy) return NoisyLayer(in, out, act, rng, spec.sigma0);
  return DenseLayer(in, out, act, rng);
}

}  // namespace

Network::Network(const NetworkSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.input_dim == 0 || spec.outputs == 0) throw std::invalid_argument("network needs inputs and outputs");
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden) {
    trunk_.push_back(make_layer(in, h, spec.activation, spec, rng));
    in = h;
  }
  switch (spec.head) {
    case Head::q_values:
      heads_.push_back(make_layer(in, spec.outputs, Activation::identity, spec, rng));
      break;
    case Head::dueling:
      heads_.push_back(make_layer(in, 1, Activation::identity, spec, rng));
      heads_.push_back(make_layer(in, spec.outputs, Activation::identity, spec, rng));
      break;
    case Head::policy_logits_plus_q:
      heads_.push_back(make_layer(in, spec.outputs, Activation::identity, spec, rng));
      heads_.push_back(make_layer(in, spec.outputs, Activation::identity, spec, rng));
      break;
  }
}

std::size_t Network::output_dim() const {
  return spec_.head == Head::policy_logits_plus_q ? 2 * spec_.outputs : spec_.outputs;
}

Matrix Network::run(const Matrix& x, NoiseMode mode, Rng* rng, Tape* tape) const {
  if (static_cast<std::size_t>(x.rows()) != spec_.input_dim) {
    throw std::invalid_argument("network expects input dimension " + std::to_string(spec_.input_dim) +
                                ", got " + std::to_string(x.rows()));
  }
  if (tape) {
    tape->trunk.assign(trunk_.size(), {});
    tape->heads.assign(heads_.size(), {});
    tape->valid = false;
  }
  Matrix h = x;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    LayerRecord* rec = tape ? &tape->trunk[i] : nullptr;
    h = std::visit([&](const auto& l) { return l.forward(h, mode, rng, rec); }, trunk_[i]);
  }
  std::vector<Matrix> outs;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    LayerRecord* rec = tape ? &tape->heads[i] : nullptr;
    outs.push_back(std::visit([&](const auto& l) { return l.forward(h, mode, rng, rec); }, heads_[i]));
  }
  if (tape) tape->valid = true;
  switch (spec_.head) {
    case Head::q_values: return outs[0];
    case Head::dueling: {
      Matrix q = outs[1];
      const Eigen::RowVectorXd mean = outs[1].colwise().mean();
      q.rowwise() -= mean;
      q.rowwise() += outs[0].row(0);
      return q;
    }
    case Head::policy_logits_plus_q: {
      Matrix y(2 * spec_.outputs, x.cols());
      y.topRows(static_cast<Eigen::Index>(spec_.outputs)) = outs[0];
      y.bottomRows(static_cast<Eigen::Index>(spec_.outputs)) = outs[1];
      return y;
    }
  }
  return outs[0];
}

Matrix Network::predict(const Matrix& x, NoiseMode mode, Rng* rng) const { return run(x, mode, rng, nullptr); }

Matrix Network::forward(const Matrix& x, NoiseMode mode, Rng* rng, Tape& tape) const {
  return run(x, mode, rng, &tape);
}

void Network::backward(const Tape& tape, const Matrix& grad_out) {
  if (!tape.valid) throw std::logic_error("backward called before a recorded forward pass");
  if (static_cast<std::size_t>(grad_out.rows()) != output_dim()) {
    throw std::invalid_argument("output gradient has wrong dimension");
  }
  std::vector<Matrix> head_grads;
  switch (spec_.head) {
    case Head::q_values:
      head_grads.push_back(grad_out);
      break;
    case Head::dueling: {
      head_grads.push_back(grad_out.colwise().sum());
      Matrix ga = grad_out;
      const Eigen::RowVectorXd mean = grad_out.colwise().mean();
      ga.rowwise() -= mean;
      head_grads.push_back(std::move(ga));
      break;
    }
    case Head::policy_logits_plus_q:
      head_grads.push_back(grad_out.topRows(static_cast<Eigen::Index>(spec_.outputs)));
      head_grads.push_back(grad_out.bottomRows(static_cast<Eigen::Index>(spec_.outputs)));
      break;
  }
  Matrix g;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    Matrix gi = std::visit([&](auto& l) { return l.backward(head_grads[i], tape.heads[i]); }, heads_[i]);
    if (i == 0) {
      g = std::move(gi);
    } else {
      g += gi;
    }
  }
  for (std::size_t i = trunk_.size(); i-- > 0;) {
    g = std::visit([&](auto& l) { return l.backward(g, tape.trunk[i]); }, trunk_[i]);
  }
}

void Network::zero_grad() {
  for (auto& l : trunk_) std::visit([](auto& x) { x.zero_grad(); }, l);
  for (auto& l : heads_) std::visit([](auto& x) { x.zero_grad(); }, l);
}

std::vector<Parameter> Network::parameters() {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    std::visit([&](auto& l) { l.collect(out, "trunk" + std::to_string(i)); }, trunk_[i]);
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    std::visit([&](auto& l) { l.collect(out, "head" + std::to_string(i)); }, heads_[i]);
  }
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

nlohmann::json Network::to_json() const {
  nlohmann::json j;
  j["input_dim"] = spec_.input_dim;
  j["hidden"] = spec_.hidden;
  j["outputs"] = spec_.outputs;
  j["head"] = spec_.head == Head::q_values ? "q_values" : spec_.head == Head::dueling ? "dueling" : "policy_logits_plus_q";
  j["noisy"] = spec_.noisy;
  j["activation"] = to_string(spec_.activation);
  j["sigma0"] = spec_.sigma0;
  j["trunk"] = nlohmann::json::array();
  for (const auto& l : trunk_) j["trunk"].push_back(std::visit([](const auto& x) { return x.to_json(); }, l));
  j["heads"] = nlohmann::json::array();
  for (const auto& l : heads_) j["heads"].push_back(std::visit([](const auto& x) { return x.to_json(); }, l));
  return j;
}

Network Network::from_json(const nlohmann::json& j) {
  Network n;
  n.spec_.input_dim = j.at("input_dim").get<std::size_t>();
  n.spec_.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  n.spec_.outputs = j.at("outputs").get<std::size_t>();
  const auto head = j.at("head").get<std::string>();
  if (head == "q_values") {
    n.spec_.head = Head::q_values;
  } else if (head == "dueling") {
    n.spec_.head = Head::dueling;
  } else if (head == "policy_logits_plus_q") {
    n.spec_.head = Head::policy_logits_plus_q;
  } else {
    throw std::runtime_error("unknown head '" + head + "'");
  }
  n.spec_.noisy = j.at("noisy").get<bool>();
  n.spec_.activation = parse_activation(j.at("activation").get<std::string>());
  n.spec_.sigma0 = j.value("sigma0", 0.5);
  auto load = [](const nlohmann::json& lj) -> Layer {
    if (lj.at("type") == "noisy") return NoisyLayer::from_json(lj);
    return DenseLayer::from_json(lj);
  };
  for (const auto& lj : j.at("trunk")) n.trunk_.push_back(load(lj));
  for (const auto& lj : j.at("heads")) n.heads_.push_back(load(lj));
  return n;
}

// ---------------------------------------------------------------------------

void AdamOptimizer::step(std::vector<Parameter> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      v_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("optimiser state does not match parameter list");

  double norm_sq = 0.0;
  for (const auto& p : params) {
    const Matrix& g = *p.grad;
    if (!g.allFinite()) {
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g.data()[i])) {
          std::ostringstream msg;
          msg << "non-finite gradient in " << p.name << "[" << i << "] = " << g.data()[i] << " at step " << t_ + 1;
          throw std::runtime_error(msg.str());
        }
      }
    }
    norm_sq += g.squaredNorm();
  }
  double scale = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix g = *params[k].grad * scale;
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m_[k] / bc1;
    const Matrix v_hat = v_[k] / bc2;
    *params[k].value -= (cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
    if (params[k].non_negative) *params[k].value = params[k].value->cwiseMax(0.0);
  }
}

}  // namespace feudalgain::nn
