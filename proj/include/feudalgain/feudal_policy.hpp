#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "feudalgain/dialogue.hpp"
#include "feudalgain/features.hpp"
#include "feudalgain/learners.hpp"

namespace feudalgain {

/// feudalgain: merged actor-critic + slot DQN on information gain, noisy nets.
/// feudal: master/general actor-critic + slot DQN on r_e with pass, epsilon-greedy.
/// feudal_nn: feudal with noisy nets instead of epsilon-greedy.
enum class PolicyMode { feudalgain, feudal, feudal_nn };

std::string_view to_string(PolicyMode m);
PolicyMode parse_policy_mode(std::string_view s);

struct PolicyConfig {
  PolicyMode mode = PolicyMode::feudalgain;
  bool pass_tuples = true;  // false: the w/o-pass ablation
  bool info_gain = true;    // false: train the slot network on r_e
  std::vector<std::size_t> master_hidden{250, 130};
  std::vector<std::size_t> slot_hidden{130, 50};
  double sigma0 = 0.5;
  double epsilon_start = 0.3;
  double epsilon_end = 0.0;
  DqnConfig dqn{};
  AcerConfig acer{};
  RewardConfig reward{};
  int max_turns = 25;

  ArchitectureMode architecture() const {
    return mode == PolicyMode::feudalgain ? ArchitectureMode::feudalgain : ArchitectureMode::feudal_baseline;
  }
  bool noisy() const { return mode != PolicyMode::feudal; }
  /// Whether the slot network learns from information gain.
  bool uses_info_gain() const { return mode == PolicyMode::feudalgain && info_gain; }
  /// Short label: mode plus ablation suffixes.
  std::string label() const;
};

/// Learner inputs extracted from one finished dialogue.
struct TransitionSet {
  std::vector<SlotTransition> slot;
  AcerEpisode top;      // merged policy, or master policy in the baseline
  AcerEpisode general;  // baseline general policy; empty otherwise
};

TransitionSet build_transitions(const Episode& ep, const PolicyConfig& cfg, const FeatureEncoder& enc,
                                const Ontology& ontology, const EntityDatabase& db, bool masks);

struct UpdateStats {
  std::size_t slot_transitions = 0;
  std::size_t slot_updates = 0;
  std::optional<double> slot_loss;
};

class PolicySet final : public DialoguePolicy {
 public:
  PolicySet(PolicyConfig cfg, const Ontology& ontology, std::uint64_t seed);

  PolicyDecision decide(const BeliefState& b, const DecisionContext& ctx, Rng& rng) const override;
  std::string kind() const override { return cfg_.label(); }

  /// Stores the dialogue's transitions and runs the per-dialogue updates.
  UpdateStats observe(const Episode& ep, const Ontology& ontology, const EntityDatabase& db, bool masks,
                      bool log_loss);

  void set_epsilon(double e) { epsilon_ = e; }
  double epsilon() const { return epsilon_; }
  const PolicyConfig& config() const { return cfg_; }
  const FeatureEncoder& encoder() const { return encoder_; }
  const SystemActionSpace& space() const { return space_; }
  const DqnLearner& info() const { return info_; }
  DqnLearner& info() { return info_; }
  const AcerLearner& top() const { return top_; }
  AcerLearner& top() { return top_; }
  const AcerLearner* general() const { return general_ ? &*general_ : nullptr; }
  std::size_t dialogues() const { return dialogues_; }

  nlohmann::json checkpoint(const Ontology& ontology) const;
  static std::unique_ptr<PolicySet> from_checkpoint(const nlohmann::json& j, const Ontology& ontology);

 private:
  /// Best allowed information action, or nullopt when all are masked.
  std::optional<std::pair<std::size_t, std::size_t>> choose_info(const BeliefState& b, const DecisionContext& ctx,
                                                                 const ActionMask& mask, Rng& rng) const;

  PolicyConfig cfg_;
  FeatureEncoder encoder_;
  SystemActionSpace space_;
  DqnLearner info_;
  AcerLearner top_;
  std::optional<AcerLearner> general_;
  Rng learn_rng_;
  double epsilon_ = 0.0;
  std::size_t dialogues_ = 0;
};

inline constexpr int kCheckpointVersion = 1;

/// Loads a trained policy or a pseudo-checkpoint ({"kind": "scripted_oracle"|"always_bye"}).
std::unique_ptr<DialoguePolicy> load_policy(const nlohmann::json& j, const Ontology& ontology);
nlohmann::json pseudo_checkpoint(std::string_view kind);

}  // namespace feudalgain
