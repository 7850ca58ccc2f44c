#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "feudalgain/domain.hpp"

namespace feudalgain {

/// Distribution over a slot's values followed by dontcare and none.
struct SlotDistribution {
  std::size_t slot = 0;
  std::vector<double> probs;

  std::size_t value_count() const { return probs.size() - 2; }
  std::size_t dontcare_index() const { return probs.size() - 2; }
  std::size_t none_index() const { return probs.size() - 1; }
  double dontcare() const { return probs[dontcare_index()]; }
  double none() const { return probs.back(); }

  /// Argmax over the full support; ties resolve to the lowest index.
  std::size_t top() const;
  /// Argmax over values and dontcare (everything except none).
  std::size_t top_informed() const;
  double sum() const;
};

struct BeliefState {
  std::vector<SlotDistribution> slots;
  /// Flags indexed like Ontology::requestable().
  std::vector<char> requested;
  ActType last_user_act = ActType::null;
  std::optional<SystemAction> last_system_action;
  int turn = 0;
  std::optional<std::size_t> offered_entity;

  const SlotDistribution& slot(std::size_t s) const { return slots.at(s); }
  nlohmann::json to_json(const Ontology& ontology) const;
};

/// Observation fed into the focus rule for one user turn.
struct TurnEvidence {
  /// Per slot: sub-distribution over values then dontcare (size values+1).
  /// All-zero rows carry no evidence.
  std::vector<std::vector<double>> slot_mass;
  std::vector<std::size_t> new_requests;  // requestable indices
  ActType act_type = ActType::null;

  static TurnEvidence empty(const Ontology& ontology);
  double mass(std::size_t slot) const;
};

BeliefState initial_belief(const Ontology& ontology);

/// p'(v) = q(v) + (1 - m) p(v) per slot, with q(none) = 0 and m = sum q.
BeliefState focus_update(const BeliefState& b, const TurnEvidence& ev);

/// Maps an observed user utterance (each act carrying its confidence) to
/// focus-rule evidence. `context` is the system act the user answered.
TurnEvidence evidence_from_acts(std::span<const DialogueAct> acts, const DialogueAct* context,
                                const Ontology& ontology);
inline TurnEvidence evidence_from_act(const DialogueAct& act, const DialogueAct* context,
                                      const Ontology& ontology) {
  return evidence_from_acts(std::span<const DialogueAct>(&act, 1), context, ontology);
}

/// Records the system's act in the state: last action, offered entity, and
/// clears requests the act answers.
BeliefState apply_system_act(const BeliefState& b, const SystemAction& action, const DialogueAct& act,
                             std::optional<std::size_t> entity, const Ontology& ontology);

}  // namespace feudalgain
