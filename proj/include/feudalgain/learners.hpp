#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include <json.hpp>

#include "feudalgain/neural.hpp"
#include "feudalgain/rng.hpp"

namespace feudalgain {

/// Fixed-capacity FIFO store with uniform sampling.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1) : capacity_(capacity) {}

  void push(T item) {
    if (capacity_ == 0) return;
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(item));
  }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }
  const T& sample(Rng& rng) const { return items_[rng.index(items_.size())]; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

// ---------------------------------------------------------------------------
// Slot-shared dueling double DQN

/// One step of the information policy. Feature matrices hold one column per slot.
struct SlotTransition {
  nn::Matrix state;
  int slot = -1;  // -1: pass (baseline only)
  std::size_t action = 0;
  double reward = 0.0;
  nn::Matrix next_state;
  std::vector<char> next_mask;  // slot-major info mask at next_state
  bool terminal = false;
};

struct DqnConfig {
  double gamma = 0.99;
  std::size_t batch = 64;
  std::size_t steps_per_dialogue = 2;
  std::size_t target_sync = 200;
  std::size_t capacity = 10000;
  nn::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 10.0};
  std::size_t loss_samples = 512;
};

/// Q-learner whose network scores one slot at a time; actions are
/// (request, confirm, select[, pass]).
class DqnLearner {
 public:
  DqnLearner() = default;
  DqnLearner(const nn::NetworkSpec& spec, bool with_pass, DqnConfig cfg, Rng& init_rng);

  const nn::Network& online() const { return online_; }
  nn::Network& online() { return online_; }
  const nn::Network& target() const { return target_; }
  bool with_pass() const { return with_pass_; }
  std::size_t types() const { return with_pass_ ? 4 : 3; }
  const DqnConfig& config() const { return cfg_; }

  /// Q-values, one column per slot.
  nn::Matrix q_values(const nn::Matrix& slots, nn::NoiseMode mode, Rng* rng) const;
  /// Global argmax over allowed (slot, type); nullopt when nothing is allowed.
  static std::optional<std::pair<std::size_t, std::size_t>> best(const nn::Matrix& q, const std::vector<char>& mask);

  /// Target r + gamma * Q_target(b', argmax_a Q_online(b', a)); y = r when terminal.
  double td_target(const SlotTransition& t, nn::NoiseMode mode, Rng* rng) const;

  void store(SlotTransition t);
  /// Runs `steps_per_dialogue` minibatch updates. Returns the number performed.
  std::size_t update(Rng& rng, nn::NoiseMode mode);
  /// Mean squared TD error over `loss_samples` replay draws with mean weights.
  std::optional<double> replay_loss(Rng& rng) const;

  const ReplayBuffer<SlotTransition>& replay() const { return replay_; }
  std::size_t updates() const { return updates_; }
  void sync_target() { target_ = online_; }

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  double prediction(const nn::Matrix& q, std::size_t first_col, const SlotTransition& t) const;
  double bootstrap(const nn::Matrix& q_online, const nn::Matrix& q_target, std::size_t first_col,
                   const SlotTransition& t) const;

  nn::Network online_, target_;
  bool with_pass_ = false;
  DqnConfig cfg_;
  nn::AdamOptimizer opt_;
  ReplayBuffer<SlotTransition> replay_;
  std::size_t updates_ = 0;
};

// ---------------------------------------------------------------------------
// Actor-critic with experience replay

struct AcerStep {
  nn::Vector state;
  std::size_t action = 0;
  std::vector<double> behaviour;  // full behaviour distribution at this step
  std::vector<char> mask;
  double reward = 0.0;
};

using AcerEpisode = std::vector<AcerStep>;  // last step is terminal

struct AcerConfig {
  double gamma = 0.99;
  double truncation = 10.0;
  double entropy = 0.01;
  std::size_t replay_updates = 4;
  std::size_t capacity = 2000;
  nn::AdamConfig adam{5e-4, 0.9, 0.999, 1e-8, 10.0};
};

/// Softmax restricted to allowed entries; disallowed get probability 0.
std::vector<double> masked_softmax(const double* logits, std::size_t n, const std::vector<char>& mask);

/// Importance weight min(c, rho) used by the actor term.
inline double truncated_weight(double rho, double c) { return rho < c ? rho : c; }

/// Retrace targets for one episode given per-step Q(a_t), V(b_t) and
/// truncated ratios min(1, rho_t).
std::vector<double> retrace_targets(const std::vector<double>& rewards, const std::vector<double>& q_taken,
                                    const std::vector<double>& values, const std::vector<double>& rho_bar,
                                    double gamma);

class AcerLearner {
 public:
  AcerLearner() = default;
  AcerLearner(const nn::NetworkSpec& spec, AcerConfig cfg, Rng& init_rng);

  std::size_t actions() const { return net_.spec().outputs; }
  const nn::Network& network() const { return net_; }
  nn::Network& network() { return net_; }
  const AcerConfig& config() const { return cfg_; }

  /// Action distribution over allowed actions.
  std::vector<double> policy(const nn::Vector& state, const std::vector<char>& mask, nn::NoiseMode mode,
                             Rng* rng) const;

  /// Stores the episode, then trains on it plus `replay_updates` replayed episodes.
  void observe(AcerEpisode episode, Rng& rng, nn::NoiseMode mode);
  /// One gradient step on one episode.
  void train_episode(const AcerEpisode& episode, Rng& rng, nn::NoiseMode mode);

  const ReplayBuffer<AcerEpisode>& replay() const { return replay_; }

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  nn::Network net_;
  AcerConfig cfg_;
  nn::AdamOptimizer opt_;
  ReplayBuffer<AcerEpisode> replay_;
};

}  // namespace feudalgain
