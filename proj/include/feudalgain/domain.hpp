#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace feudalgain {

inline constexpr std::string_view kDontCare = "dontcare";
inline constexpr std::string_view kNone = "none";
/// Entity key holding the venue name; not a slot.
inline constexpr std::string_view kNameKey = "name";

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InformableSlot {
  std::string name;
  std::vector<std::string> values;
  /// Surface forms used by the rule NLU, keyed by value.
  std::map<std::string, std::vector<std::string>> value_synonyms;
  /// Surface forms of the slot name itself ("price" for pricerange).
  std::vector<std::string> aliases;
};

/// Slots and values of a task domain. Ordering is the file order and is
/// stable: slot and value indices are used as feature and action positions.
class Ontology {
 public:
  Ontology() = default;

  static Ontology from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::string& name() const { return name_; }
  const std::vector<InformableSlot>& informable() const { return informable_; }
  const InformableSlot& slot(std::size_t i) const { return informable_.at(i); }
  std::size_t slot_count() const { return informable_.size(); }
  const std::vector<std::string>& requestable() const { return requestable_; }
  const std::map<std::string, std::vector<std::string>>& requestable_aliases() const {
    return requestable_aliases_;
  }

  std::optional<std::size_t> slot_index(std::string_view slot) const;
  /// Index into the slot's value list; dontcare/none are not values.
  std::optional<std::size_t> value_index(std::size_t slot, std::string_view value) const;
  std::optional<std::size_t> requestable_index(std::string_view slot) const;
  bool is_informable(std::string_view slot) const { return slot_index(slot).has_value(); }

  /// Largest value-list size over all informable slots.
  std::size_t max_cardinality() const;

 private:
  std::string name_;
  std::vector<InformableSlot> informable_;
  std::vector<std::string> requestable_;
  std::map<std::string, std::vector<std::string>> requestable_aliases_;
};

Ontology load_ontology(const std::filesystem::path& path);

using Entity = std::map<std::string, std::string>;

struct SlotValue {
  std::string slot;
  std::string value;
  bool operator==(const SlotValue&) const = default;
};

/// Venue table. Informable values are additionally indexed for fast matching.
class EntityDatabase {
 public:
  EntityDatabase() = default;
  EntityDatabase(const Ontology& ontology, std::vector<Entity> entities);

  static EntityDatabase from_json(const Ontology& ontology, const nlohmann::json& doc);
  nlohmann::json to_json() const;

  std::size_t size() const { return entities_.size(); }
  bool empty() const { return entities_.empty(); }
  const Entity& entity(std::size_t i) const { return entities_.at(i); }
  const std::vector<Entity>& entities() const { return entities_; }
  /// Value index of `slot` for entity `i`.
  std::size_t value_of(std::size_t i, std::size_t slot) const { return index_[i][slot]; }

  /// Indices of entities matching every constraint, in database order.
  /// A constraint value of dontcare matches anything.
  std::vector<std::size_t> query(std::span<const SlotValue> constraints) const;
  /// Index-level query: `values[s]` is a value index or nullopt for "any".
  std::vector<std::size_t> query_indices(std::span<const std::optional<std::size_t>> values) const;
  std::size_t count_indices(std::span<const std::optional<std::size_t>> values) const;

 private:
  std::vector<std::string> slot_names_;
  std::vector<std::map<std::string, std::size_t, std::less<>>> value_lookup_;
  std::vector<Entity> entities_;
  std::vector<std::vector<std::size_t>> index_;
};

EntityDatabase load_database(const Ontology& ontology, const std::filesystem::path& path);

/// Procedural venue table under a fixed seed.
std::vector<Entity> generate_entities(const Ontology& ontology, std::size_t count,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dialogue acts

enum class ActType {
  request,
  confirm,
  select,
  inform,
  affirm,
  negate,
  hello,
  bye,
  reqmore,
  repeat,
  null,
  pass,
};

inline constexpr std::size_t kActTypeCount = 12;

std::string_view to_string(ActType t);
ActType parse_act_type(std::string_view s);

struct DialogueAct {
  ActType type = ActType::null;
  std::vector<SlotValue> items;
  double confidence = 1.0;

  static DialogueAct request(std::string slot) { return {ActType::request, {{std::move(slot), ""}}}; }
  static DialogueAct confirm(std::string slot, std::string value) {
    return {ActType::confirm, {{std::move(slot), std::move(value)}}};
  }
  static DialogueAct inform(std::string slot, std::string value) {
    return {ActType::inform, {{std::move(slot), std::move(value)}}};
  }
  static DialogueAct of(ActType t) { return {t, {}}; }

  /// Throws DomainError when the act violates its type's shape rules.
  void validate() const;
  std::string str() const;
  nlohmann::json to_json() const;
  static DialogueAct from_json(const nlohmann::json& j);

  bool operator==(const DialogueAct&) const = default;
};

// ---------------------------------------------------------------------------
// System action spaces

enum class ActionKind {
  request,
  confirm,
  select,
  inform,
  inform_alternatives,
  reqmore,
  bye,
  repeat,
  pass,
  delegate_info,     // a_i
  delegate_general,  // a_g
};

std::string_view to_string(ActionKind k);

inline bool is_info_kind(ActionKind k) {
  return k == ActionKind::request || k == ActionKind::confirm || k == ActionKind::select;
}

struct SystemAction {
  ActionKind kind = ActionKind::reqmore;
  int slot = -1;  // informable slot index for info actions

  bool operator==(const SystemAction&) const = default;
  std::string str(const Ontology& ontology) const;
};

/// Number of information-seeking action types per slot.
inline constexpr std::size_t kInfoTypes = 3;
/// The fixed general action list, in order.
inline constexpr ActionKind kGeneralKinds[] = {ActionKind::inform, ActionKind::inform_alternatives,
                                               ActionKind::reqmore, ActionKind::bye,
                                               ActionKind::repeat};
inline constexpr std::size_t kGeneralCount = 5;

enum class ArchitectureMode { feudal_baseline, feudalgain };

struct SystemActionSpace {
  std::vector<SystemAction> info_actions;     // A_i (slot-major: request, confirm, select)
  std::vector<SystemAction> general_actions;  // A_g
  std::vector<SystemAction> master_actions;   // {a_i, a_g}
  std::vector<SystemAction> merged_actions;   // A_g ∪ {a_i}; empty in baseline mode
  ArchitectureMode mode = ArchitectureMode::feudalgain;

  bool info_has_pass() const {
    return !info_actions.empty() && info_actions.back().kind == ActionKind::pass;
  }
};

SystemActionSpace enumerate_actions(const Ontology& ontology, ArchitectureMode mode);

/// Position of a concrete (non-pass, non-delegate) action in the canonical
/// list info(3 per slot) + general(5); used for one-hot features.
std::size_t canonical_action_index(const SystemAction& a, std::size_t slot_count);
std::size_t canonical_action_count(std::size_t slot_count);

}  // namespace feudalgain
