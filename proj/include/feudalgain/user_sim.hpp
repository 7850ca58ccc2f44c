#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "feudalgain/domain.hpp"
#include "feudalgain/rng.hpp"

namespace feudalgain {

enum class UserProfile { standard, unfriendly };

/// One of the six benchmark environment settings.
struct EnvProfile {
  int id = 1;
  double semantic_error_rate = 0.0;
  bool action_masks = true;
  UserProfile user = UserProfile::standard;

  static EnvProfile get(int id);
  /// Accepts "env1".."env6" (case-insensitive) or a bare digit.
  static EnvProfile parse(std::string_view name);
  std::string name() const { return "env" + std::to_string(id); }
};

/// Behavioural knobs of the simulated user.
struct UserConfig {
  double constraint_prob = 0.6;
  double dontcare_prob = 0.05;
  int min_requests = 1;
  int max_requests = 3;
  int patience = 5;
  double volunteer_prob = 0.3;
  int max_volunteer = 2;
  double unfriendly_null_prob = 0.3;
  int max_goal_tries = 100;
};

struct UserGoal {
  std::vector<SlotValue> constraints;  // informable slots; value may be dontcare
  std::vector<std::string> requests;   // requestable slots, never empty
  int patience = 5;

  /// Goal value for a slot, or nullptr when the slot is unconstrained.
  const std::string* value_for(std::string_view slot) const;
  nlohmann::json to_json() const;
  static UserGoal from_json(const nlohmann::json& j);
};

UserGoal sample_goal(const Ontology& ontology, const EntityDatabase& db, Rng& rng, const UserConfig& cfg = {});

/// Stack of pending user acts; bye stays at the bottom.
class Agenda {
 public:
  void push(DialogueAct act);
  void pop();
  const DialogueAct& top() const { return stack_.back(); }
  bool empty() const { return stack_.empty(); }
  std::size_t size() const { return stack_.size(); }
  const std::vector<DialogueAct>& items() const { return stack_; }
  /// Removes the first matching act (searching from the top).
  bool remove(ActType type, std::string_view slot);
  bool contains(ActType type, std::string_view slot) const;
  void set_capacity(std::size_t cap) { capacity_ = cap; }
  std::size_t capacity() const { return capacity_; }

 private:
  std::vector<DialogueAct> stack_;
  std::size_t capacity_ = 64;
};

enum class CorruptionKind { none, substitute_value, null_act, flip_polarity };

struct ChannelOutput {
  DialogueAct act;  // carries the observed confidence
  CorruptionKind kind = CorruptionKind::none;
};

/// Semantic error channel: passes the act through with probability 1-e
/// (confidence ~ U(0.6,1)) or applies one corruption (confidence ~ U(0.2,0.7)).
ChannelOutput corrupt(const DialogueAct& act, double error_rate, const Ontology& ontology, Rng& rng);

struct SystemTurn;

/// Agenda-based simulated user holding one goal for one dialogue.
class SimulatedUser {
 public:
  SimulatedUser(UserGoal goal, const Ontology& ontology, const EntityDatabase& db, UserProfile profile,
                UserConfig cfg = {});

  std::vector<DialogueAct> opening(Rng& rng);
  /// True user response to a system turn; empty when the system said bye.
  std::vector<DialogueAct> respond(const SystemTurn& turn, Rng& rng);

  bool finished() const { return finished_; }
  bool gave_up() const { return gave_up_; }
  /// Offered entity meets every constraint and every request was answered.
  bool satisfied() const;
  const UserGoal& goal() const { return goal_; }
  const Agenda& agenda() const { return agenda_; }

 private:
  std::optional<std::size_t> goal_index(std::size_t slot) const;  // nullopt: any value
  std::string goal_string(std::size_t slot) const;
  bool entity_satisfies(std::size_t entity) const;
  std::optional<std::size_t> first_violation(std::size_t entity) const;
  bool convey(std::size_t slot);
  void reset_answers();
  void volunteer(std::vector<DialogueAct>& out, Rng& rng);
  std::vector<DialogueAct> pending_requests() const;

  UserGoal goal_;
  const Ontology* ontology_;
  const EntityDatabase* db_;
  UserProfile profile_;
  UserConfig cfg_;
  Agenda agenda_;
  std::vector<char> conveyed_;
  std::optional<std::size_t> accepted_;
  std::vector<char> answered_;  // per goal request
  int bad_turns_ = 0;
  bool finished_ = false;
  bool gave_up_ = false;
};

}  // namespace feudalgain
