#include "feudalgain/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace feudalgain {

using nn::Matrix;
using nn::NoiseMode;

DqnLearner::DqnLearner(const nn::NetworkSpec& spec, bool with_pass, DqnConfig cfg, Rng& init_rng)
    : online_(spec, init_rng), target_(online_), with_pass_(with_pass), cfg_(cfg), opt_(cfg.adam),
      replay_(cfg.capacity) {
  if (spec.outputs != types()) throw std::invalid_argument("information network output count mismatch");
  if (cfg.batch == 0) throw std::invalid_argument("batch size must be positive");
}

Matrix DqnLearner::q_values(const Matrix& slots, NoiseMode mode, Rng* rng) const {
  return online_.predict(slots, mode, rng);
}

std::optional<std::pair<std::size_t, std::size_t>> DqnLearner::best(const Matrix& q, const std::vector<char>& mask) {
  std::optional<std::pair<std::size_t, std::size_t>> out;
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index s = 0; s < q.cols(); ++s) {
    for (std::size_t a = 0; a < 3; ++a) {
      const auto flat = static_cast<std::size_t>(s) * 3 + a;
      if (flat < mask.size() && !mask[flat]) continue;
      const double v = q(static_cast<Eigen::Index>(a), s);
      if (v > top) {
        top = v;
        out = {static_cast<std::size_t>(s), a};
      }
    }
  }
  return out;
}

double DqnLearner::prediction(const Matrix& q, std::size_t first_col, const SlotTransition& t) const {
  const auto n = static_cast<Eigen::Index>(t.state.cols());
  const auto c0 = static_cast<Eigen::Index>(first_col);
  if (t.slot >= 0) return q(static_cast<Eigen::Index>(t.action), c0 + t.slot);
  return q.block(3, c0, 1, n).mean();
}

double DqnLearner::bootstrap(const Matrix& q_online, const Matrix& q_target, std::size_t first_col,
                             const SlotTransition& t) const {
  const auto n = static_cast<Eigen::Index>(t.next_state.cols());
  const auto c0 = static_cast<Eigen::Index>(first_col);
  const bool any = std::any_of(t.next_mask.begin(), t.next_mask.end(), [](char c) { return c != 0; });
  double top = -std::numeric_limits<double>::infinity();
  double value = 0.0;
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index a = 0; a < 3; ++a) {
      if (any && !t.next_mask[static_cast<std::size_t>(s * 3 + a)]) continue;
      if (q_online(a, c0 + s) > top) {
        top = q_online(a, c0 + s);
        value = q_target(a, c0 + s);
      }
    }
  }
  if (with_pass_) {
    const double pass = q_online.block(3, c0, 1, n).mean();
    if (pass > top) value = q_target.block(3, c0, 1, n).mean();
  }
  return value;
}

double DqnLearner::td_target(const SlotTransition& t, NoiseMode mode, Rng* rng) const {
  if (t.terminal) return t.reward;
  const Matrix qo = online_.predict(t.next_state, mode, rng);
  const Matrix qt = target_.predict(t.next_state, mode, rng);
  return t.reward + cfg_.gamma * bootstrap(qo, qt, 0, t);
}

void DqnLearner::store(SlotTransition t) {
  if (t.slot < 0 && !with_pass_) throw std::invalid_argument("pass transition given to a learner without pass");
  if (t.slot >= 0 && (t.action >= 3 || t.slot >= t.state.cols())) throw std::invalid_argument("bad slot transition");
  if (t.state.rows() != static_cast<Eigen::Index>(online_.input_dim()) || t.state.cols() != t.next_state.cols()) {
    throw std::invalid_argument("slot transition feature shape mismatch");
  }
  if (t.slot < 0) t.action = 3;
  replay_.push(std::move(t));
}

std::size_t DqnLearner::update(Rng& rng, NoiseMode mode) {
  if (replay_.size() < cfg_.batch) return 0;
  const std::size_t B = cfg_.batch;
  const auto d = replay_[0].state.rows();
  const auto n = replay_[0].state.cols();
  std::vector<const SlotTransition*> batch(B);
  Matrix x(d, static_cast<Eigen::Index>(B) * n), x2(d, static_cast<Eigen::Index>(B) * n);
  for (std::size_t k = 0; k < cfg_.steps_per_dialogue; ++k) {
    for (std::size_t i = 0; i < B; ++i) {
      batch[i] = &replay_.sample(rng);
      x.middleCols(static_cast<Eigen::Index>(i) * n, n) = batch[i]->state;
      x2.middleCols(static_cast<Eigen::Index>(i) * n, n) = batch[i]->next_state;
    }
    const Matrix qo = online_.predict(x2, mode, &rng);
    const Matrix qt = target_.predict(x2, mode, &rng);
    nn::Tape tape;
    const Matrix q = online_.forward(x, mode, &rng, tape);
    Matrix grad = Matrix::Zero(q.rows(), q.cols());
    for (std::size_t i = 0; i < B; ++i) {
      const auto& t = *batch[i];
      const std::size_t c0 = i * static_cast<std::size_t>(n);
      const double y = t.terminal ? t.reward : t.reward + cfg_.gamma * bootstrap(qo, qt, c0, t);
      const double delta = prediction(q, c0, t) - y;
      const double g = 2.0 * delta / static_cast<double>(B);
      if (t.slot >= 0) {
        grad(static_cast<Eigen::Index>(t.action), static_cast<Eigen::Index>(c0) + t.slot) += g;
      } else {
        grad.block(3, static_cast<Eigen::Index>(c0), 1, n).array() += g / static_cast<double>(n);
      }
    }
    online_.zero_grad();
    online_.backward(tape, grad);
    opt_.step(online_);
    ++updates_;
    if (updates_ % cfg_.target_sync == 0) sync_target();
  }
  return cfg_.steps_per_dialogue;
}

std::optional<double> DqnLearner::replay_loss(Rng& rng) const {
  if (replay_.empty() || cfg_.loss_samples == 0) return std::nullopt;
  const std::size_t S = cfg_.loss_samples;
  const auto d = replay_[0].state.rows();
  const auto n = replay_[0].state.cols();
  std::vector<const SlotTransition*> batch(S);
  Matrix x(d, static_cast<Eigen::Index>(S) * n), x2(d, static_cast<Eigen::Index>(S) * n);
  for (std::size_t i = 0; i < S; ++i) {
    batch[i] = &replay_.sample(rng);
    x.middleCols(static_cast<Eigen::Index>(i) * n, n) = batch[i]->state;
    x2.middleCols(static_cast<Eigen::Index>(i) * n, n) = batch[i]->next_state;
  }
  const Matrix q = online_.predict(x, NoiseMode::mean);
  const Matrix qo = online_.predict(x2, NoiseMode::mean);
  const Matrix qt = target_.predict(x2, NoiseMode::mean);
  double total = 0.0;
  for (std::size_t i = 0; i < S; ++i) {
    const auto& t = *batch[i];
    const std::size_t c0 = i * static_cast<std::size_t>(n);
    const double y = t.terminal ? t.reward : t.reward + cfg_.gamma * bootstrap(qo, qt, c0, t);
    const double delta = prediction(q, c0, t) - y;
    total += delta * delta;
  }
  return total / static_cast<double>(S);
}

nlohmann::json DqnLearner::to_json() const {
  return {{"online", online_.to_json()}, {"target", target_.to_json()}, {"with_pass", with_pass_},
          {"updates", updates_}};
}

void DqnLearner::load_json(const nlohmann::json& j) {
  auto online = nn::Network::from_json(j.at("online"));
  auto target = nn::Network::from_json(j.at("target"));
  if (online.input_dim() != online_.input_dim() || online.spec().outputs != online_.spec().outputs ||
      j.at("with_pass").get<bool>() != with_pass_) {
    throw std::runtime_error("information network in checkpoint does not match the policy layout");
  }
  online_ = std::move(online);
  target_ = std::move(target);
  updates_ = j.value("updates", std::size_t{0});
}

// ---------------------------------------------------------------------------

std::vector<double> masked_softmax(const double* logits, std::size_t n, const std::vector<char>& mask) {
  std::vector<double> p(n, 0.0);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    if (mask[a]) top = std::max(top, logits[a]);
  }
  if (!std::isfinite(top)) throw std::invalid_argument("masked_softmax: no allowed action");
  double z = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    if (!mask[a]) continue;
    p[a] = std::exp(logits[a] - top);
    z += p[a];
  }
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> retrace_targets(const std::vector<double>& rewards, const std::vector<double>& q_taken,
                                    const std::vector<double>& values, const std::vector<double>& rho_bar,
                                    double gamma) {
  const std::size_t T = rewards.size();
  if (q_taken.size() != T || values.size() != T || rho_bar.size() != T) {
    throw std::invalid_argument("retrace inputs differ in length");
  }
  std::vector<double> q_ret(T);
  if (T == 0) return q_ret;
  q_ret[T - 1] = rewards[T - 1];
  for (std::size_t t = T - 1; t-- > 0;) {
    q_ret[t] = rewards[t] + gamma * (rho_bar[t + 1] * (q_ret[t + 1] - q_taken[t + 1]) + values[t + 1]);
  }
  return q_ret;
}

AcerLearner::AcerLearner(const nn::NetworkSpec& spec, AcerConfig cfg, Rng& init_rng)
    : net_(spec, init_rng), cfg_(cfg), opt_(cfg.adam), replay_(cfg.capacity) {
  if (spec.head != nn::Head::policy_logits_plus_q) throw std::invalid_argument("actor-critic needs a policy head");
}

std::vector<double> AcerLearner::policy(const nn::Vector& state, const std::vector<char>& mask, NoiseMode mode,
                                        Rng* rng) const {
  const Matrix out = net_.predict(state, mode, rng);
  return masked_softmax(out.data(), actions(), mask);
}

void AcerLearner::observe(AcerEpisode episode, Rng& rng, NoiseMode mode) {
  if (episode.empty()) return;
  replay_.push(std::move(episode));
  train_episode(replay_[replay_.size() - 1], rng, mode);
  if (replay_.size() < 2) return;
  for (std::size_t k = 0; k < cfg_.replay_updates; ++k) train_episode(replay_.sample(rng), rng, mode);
}

void AcerLearner::train_episode(const AcerEpisode& ep, Rng& rng, NoiseMode mode) {
  const std::size_t T = ep.size();
  const std::size_t n = actions();
  if (T == 0) return;
  Matrix x(static_cast<Eigen::Index>(net_.input_dim()), static_cast<Eigen::Index>(T));
  for (std::size_t t = 0; t < T; ++t) x.col(static_cast<Eigen::Index>(t)) = ep[t].state;
  nn::Tape tape;
  const Matrix out = net_.forward(x, mode, &rng, tape);

  std::vector<std::vector<double>> pi(T);
  std::vector<double> rewards(T), q_taken(T), values(T), rho_bar(T), rho(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& s = ep[t];
    if (s.action >= n || s.behaviour.size() != n || s.mask.size() != n || !s.mask[s.action]) {
      throw std::invalid_argument("malformed actor-critic step");
    }
    const double* col = out.col(static_cast<Eigen::Index>(t)).data();
    pi[t] = masked_softmax(col, n, s.mask);
    double v = 0.0;
    for (std::size_t a = 0; a < n; ++a) v += pi[t][a] * col[n + a];
    double mu = s.behaviour[s.action];
    if (!(mu > 0.0)) {
      spdlog::warn("behaviour probability {} for a taken action; clamped", mu);
      mu = 1e-6;
    }
    rewards[t] = s.reward;
    q_taken[t] = col[n + s.action];
    values[t] = v;
    rho[t] = pi[t][s.action] / std::max(mu, 1e-6);
    rho_bar[t] = std::min(1.0, rho[t]);
  }
  const auto q_ret = retrace_targets(rewards, q_taken, values, rho_bar, cfg_.gamma);

  Matrix grad = Matrix::Zero(out.rows(), out.cols());
  const double scale = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& s = ep[t];
    const auto& p = pi[t];
    const double* col = out.col(static_cast<Eigen::Index>(t)).data();
    auto g = grad.col(static_cast<Eigen::Index>(t));
    // Critic: 0.5 (Q_ret - Q(a))^2
    g(static_cast<Eigen::Index>(n + s.action)) += -(q_ret[t] - q_taken[t]) * scale;
    // Truncated importance-weighted actor term.
    const double adv = q_ret[t] - values[t];
    const double w = truncated_weight(rho[t], cfg_.truncation);
    // Bias correction over all allowed actions.
    std::vector<double> corr(n, 0.0);
    double corr_mean = 0.0;
    double entropy = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!s.mask[a] || p[a] <= 0.0) continue;
      const double mu_a = std::max(s.behaviour[a], 1e-6);
      const double rho_a = p[a] / mu_a;
      const double coeff = rho_a > 0.0 ? std::max(0.0, 1.0 - cfg_.truncation / rho_a) : 0.0;
      corr[a] = coeff * (col[n + a] - values[t]);
      corr_mean += p[a] * corr[a];
      entropy -= p[a] * std::log(p[a]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!s.mask[j]) continue;
      const double onehot = j == s.action ? 1.0 : 0.0;
      double gj = -w * adv * (onehot - p[j]);
      gj += -(p[j] * corr[j] - p[j] * corr_mean);
      if (p[j] > 0.0) gj += cfg_.entropy * p[j] * (std::log(p[j]) + entropy);
      g(static_cast<Eigen::Index>(j)) += gj * scale;
    }
  }
  net_.zero_grad();
  net_.backward(tape, grad);
  opt_.step(net_);
}

nlohmann::json AcerLearner::to_json() const { return {{"network", net_.to_json()}}; }

void AcerLearner::load_json(const nlohmann::json& j) {
  auto net = nn::Network::from_json(j.at("network"));
  if (net.input_dim() != net_.input_dim() || net.spec().outputs != net_.spec().outputs) {
    throw std::runtime_error("actor-critic network in checkpoint does not match the policy layout");
  }
  net_ = std::move(net);
}

}  // namespace feudalgain
