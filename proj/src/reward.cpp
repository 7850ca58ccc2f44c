#include "feudalgain/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace feudalgain {

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument(std::string(name) + " has a negative or NaN entry");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string(name) + " is not normalised (sum " + std::to_string(s) + ")");
  }
}

}  // namespace

double extrinsic_reward(bool turn_ended, bool success, const RewardConfig& cfg) {
  if (!turn_ended) return cfg.turn_penalty;
  return success ? cfg.turn_penalty + cfg.success_reward : 0.0;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_divergence: length mismatch");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log2(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

double information_gain(const BeliefState& before, const SystemAction& action, const BeliefState& after,
                        const RewardConfig& cfg) {
  if (!is_info_kind(action.kind) || action.slot < 0) {
    throw std::invalid_argument("information gain is only defined for information-seeking actions, got '" +
                                std::string(to_string(action.kind)) + "'");
  }
  const auto s = static_cast<std::size_t>(action.slot);
  const auto& p = before.slot(s).probs;
  const auto& q = after.slot(s).probs;
  return cfg.divergence == Divergence::jensen_shannon ? js_divergence(p, q) : kl_divergence(p, q);
}

}  // namespace feudalgain
