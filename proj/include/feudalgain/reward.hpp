#pragma once

#include <span>
#include <stdexcept>

#include "feudalgain/belief.hpp"
#include "feudalgain/domain.hpp"

namespace feudalgain {

enum class Divergence { jensen_shannon, kullback_leibler };

struct RewardConfig {
  double success_reward = 20.0;
  double turn_penalty = -1.0;
  double delta = 0.2;
  Divergence divergence = Divergence::jensen_shannon;

  void validate() const {
    if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in [0,1]");
  }
};

/// Turn reward: the penalty on every non-final turn; on the final turn the
/// success bonus is added to the penalty, and a failed final turn yields 0.
double extrinsic_reward(bool turn_ended, bool success, const RewardConfig& cfg = {});

/// Base-2 Jensen-Shannon divergence, in [0, 1].
double js_divergence(std::span<const double> p, std::span<const double> q);
/// Base-2 KL[p || q]; infinite when p puts mass where q has none.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Divergence between the acted-on slot's distributions before and after.
/// Only defined for information-seeking actions.
double information_gain(const BeliefState& before, const SystemAction& action, const BeliefState& after,
                        const RewardConfig& cfg = {});

/// +1 when the gain reaches the threshold, -1 otherwise.
inline double thresholded_gain(double gain, double delta) { return gain >= delta ? 1.0 : -1.0; }

}  // namespace feudalgain
