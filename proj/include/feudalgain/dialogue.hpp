#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "feudalgain/belief.hpp"
#include "feudalgain/domain.hpp"
#include "feudalgain/reward.hpp"
#include "feudalgain/rng.hpp"
#include "feudalgain/user_sim.hpp"

namespace feudalgain {

/// A system action made concrete against the current belief and database.
struct SystemTurn {
  SystemAction action;
  DialogueAct act;
  std::optional<std::size_t> entity;  // venue referenced by inform acts
};

SystemTurn realise_action(const SystemAction& action, const BeliefState& b, const Ontology& ontology,
                          const EntityDatabase& db);

/// Top-value constraints of the belief (dontcare/none slots left open).
std::vector<std::optional<std::size_t>> belief_constraints(const BeliefState& b);

enum class Actor { info, general };

/// What the policy chose and the behaviour distributions the learners need.
struct PolicyDecision {
  SystemAction action;
  Actor actor = Actor::general;
  /// Choice and distribution of the top-level policy (merged or master).
  std::size_t top_choice = 0;
  std::vector<double> top_probs;
  std::vector<char> top_mask;
  /// Baseline general policy; empty when it did not act or does not exist.
  std::size_t general_choice = 0;
  std::vector<double> general_probs;
  std::vector<char> general_mask;
  bool fallback = false;
};

struct DecisionContext {
  const Ontology& ontology;
  const EntityDatabase& db;
  bool masks = true;
  bool train = false;
};

class DialoguePolicy {
 public:
  virtual ~DialoguePolicy() = default;
  virtual PolicyDecision decide(const BeliefState& b, const DecisionContext& ctx, Rng& rng) const = 0;
  virtual std::string kind() const = 0;
};

/// Hand-written belief-driven policy: requests unknown slots, then informs.
class ScriptedOraclePolicy final : public DialoguePolicy {
 public:
  PolicyDecision decide(const BeliefState& b, const DecisionContext& ctx, Rng& rng) const override;
  std::string kind() const override { return "scripted_oracle"; }
};

class AlwaysByePolicy final : public DialoguePolicy {
 public:
  PolicyDecision decide(const BeliefState& b, const DecisionContext& ctx, Rng& rng) const override;
  std::string kind() const override { return "always_bye"; }
};

enum class EndReason { system_bye, user_bye, patience, max_turns };
std::string_view to_string(EndReason r);

struct EpisodeTurn {
  BeliefState belief;
  PolicyDecision decision;
  DialogueAct system_act;
  std::vector<DialogueAct> user_acts;      // what the user meant
  std::vector<DialogueAct> observed_acts;  // after the error channel
  double reward = 0.0;
  BeliefState next_belief;
  bool terminal = false;
};

struct Episode {
  UserGoal goal;
  std::vector<EpisodeTurn> turns;
  bool success = false;
  double total_reward = 0.0;
  EndReason end = EndReason::max_turns;

  std::size_t length() const { return turns.size(); }
  nlohmann::json trace(const Ontology& ontology) const;
};

struct DialogueOptions {
  int max_turns = 25;
  bool train = false;
  RewardConfig reward{};
  UserConfig user{};
};

/// Runs one simulated dialogue for a fixed goal.
Episode run_dialogue(const DialoguePolicy& policy, const EnvProfile& env, const Ontology& ontology,
                     const EntityDatabase& db, const UserGoal& goal, Rng& user_rng, Rng& policy_rng,
                     const DialogueOptions& opts = {});

/// Samples the goal from `rng` and uses the same stream for the user and policy.
Episode run_dialogue(const DialoguePolicy& policy, const EnvProfile& env, const Ontology& ontology,
                     const EntityDatabase& db, Rng& rng, const DialogueOptions& opts = {});

}  // namespace feudalgain
