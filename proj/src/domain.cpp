#include "feudalgain/domain.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include "feudalgain/rng.hpp"

namespace feudalgain {

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError("parse error in " + path.string() + ": " + e.what());
  }
}

bool is_reserved(std::string_view v) { return v == kDontCare || v == kNone; }

}  // namespace

Ontology Ontology::from_json(const nlohmann::json& doc) {
  Ontology o;
  try {
    o.name_ = doc.at("name").get<std::string>();
    std::set<std::string> seen;
    for (const auto& js : doc.at("informable")) {
      InformableSlot slot;
      slot.name = js.at("slot").get<std::string>();
      if (!seen.insert(slot.name).second) throw DomainError("duplicate slot '" + slot.name + "'");
      slot.values = js.at("values").get<std::vector<std::string>>();
      if (slot.values.empty()) throw DomainError("slot '" + slot.name + "' has an empty value list");
      if (slot.values.size() < 2) throw DomainError("slot '" + slot.name + "' needs at least 2 values");
      std::set<std::string> vals;
      for (const auto& v : slot.values) {
        if (is_reserved(v)) throw DomainError("slot '" + slot.name + "' uses reserved value '" + v + "'");
        if (!vals.insert(v).second) throw DomainError("slot '" + slot.name + "' repeats value '" + v + "'");
      }
      if (js.contains("synonyms")) {
        slot.value_synonyms = js.at("synonyms").get<std::map<std::string, std::vector<std::string>>>();
        for (const auto& [v, _] : slot.value_synonyms) {
          if (!vals.contains(v)) throw DomainError("synonyms for unknown value '" + v + "'");
        }
      }
      if (js.contains("aliases")) slot.aliases = js.at("aliases").get<std::vector<std::string>>();
      o.informable_.push_back(std::move(slot));
    }
    if (o.informable_.empty()) throw DomainError("ontology has no informable slots");
    o.requestable_ = doc.at("requestable").get<std::vector<std::string>>();
    std::set<std::string> req(o.requestable_.begin(), o.requestable_.end());
    if (req.size() != o.requestable_.size()) throw DomainError("duplicate requestable slot");
    for (const auto& s : o.informable_) {
      if (!req.contains(s.name)) throw DomainError("informable slot '" + s.name + "' is not requestable");
    }
    if (doc.contains("requestable_aliases")) {
      o.requestable_aliases_ =
          doc.at("requestable_aliases").get<std::map<std::string, std::vector<std::string>>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed ontology: ") + e.what());
  }
  return o;
}

nlohmann::json Ontology::to_json() const {
  nlohmann::json doc;
  doc["name"] = name_;
  doc["informable"] = nlohmann::json::array();
  for (const auto& s : informable_) {
    nlohmann::json js{{"slot", s.name}, {"values", s.values}};
    if (!s.value_synonyms.empty()) js["synonyms"] = s.value_synonyms;
    if (!s.aliases.empty()) js["aliases"] = s.aliases;
    doc["informable"].push_back(std::move(js));
  }
  doc["requestable"] = requestable_;
  if (!requestable_aliases_.empty()) doc["requestable_aliases"] = requestable_aliases_;
  return doc;
}

std::optional<std::size_t> Ontology::slot_index(std::string_view slot) const {
  for (std::size_t i = 0; i < informable_.size(); ++i) {
    if (informable_[i].name == slot) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Ontology::value_index(std::size_t slot, std::string_view value) const {
  const auto& vals = informable_.at(slot).values;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (vals[i] == value) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Ontology::requestable_index(std::string_view slot) const {
  for (std::size_t i = 0; i < requestable_.size(); ++i) {
    if (requestable_[i] == slot) return i;
  }
  return std::nullopt;
}

std::size_t Ontology::max_cardinality() const {
  std::size_t m = 0;
  for (const auto& s : informable_) m = std::max(m, s.values.size());
  return m;
}

Ontology load_ontology(const std::filesystem::path& path) { return Ontology::from_json(read_json(path)); }

// ---------------------------------------------------------------------------

EntityDatabase::EntityDatabase(const Ontology& ontology, std::vector<Entity> entities)
    : entities_(std::move(entities)) {
  for (const auto& s : ontology.informable()) {
    slot_names_.push_back(s.name);
    std::map<std::string, std::size_t, std::less<>> lookup;
    for (std::size_t v = 0; v < s.values.size(); ++v) lookup.emplace(s.values[v], v);
    value_lookup_.push_back(std::move(lookup));
  }
  index_.reserve(entities_.size());
  for (std::size_t e = 0; e < entities_.size(); ++e) {
    const auto& ent = entities_[e];
    for (const auto& r : ontology.requestable()) {
      if (!ent.contains(r)) {
        throw DomainError("entity " + std::to_string(e) + " lacks requestable slot '" + r + "'");
      }
    }
    std::vector<std::size_t> row;
    for (std::size_t s = 0; s < slot_names_.size(); ++s) {
      const auto& v = ent.at(slot_names_[s]);
      auto it = value_lookup_[s].find(v);
      if (it == value_lookup_[s].end()) {
        throw DomainError("entity " + std::to_string(e) + " uses value '" + v + "' not in ontology slot '" +
                          slot_names_[s] + "'");
      }
      row.push_back(it->second);
    }
    index_.push_back(std::move(row));
  }
}

EntityDatabase EntityDatabase::from_json(const Ontology& ontology, const nlohmann::json& doc) {
  try {
    return EntityDatabase(ontology, doc.at("entities").get<std::vector<Entity>>());
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed database: ") + e.what());
  }
}

nlohmann::json EntityDatabase::to_json() const { return nlohmann::json{{"entities", entities_}}; }

std::vector<std::size_t> EntityDatabase::query(std::span<const SlotValue> constraints) const {
  std::vector<std::optional<std::size_t>> wanted(slot_names_.size());
  std::vector<char> constrained(slot_names_.size(), 0);
  for (const auto& c : constraints) {
    auto slot = std::find(slot_names_.begin(), slot_names_.end(), c.slot);
    if (slot == slot_names_.end()) throw DomainError("unknown slot '" + c.slot + "' in query");
    const auto s = static_cast<std::size_t>(slot - slot_names_.begin());
    if (c.value == kDontCare) continue;
    auto it = value_lookup_[s].find(c.value);
    if (it == value_lookup_[s].end()) return {};  // no entity carries an unknown value
    if (constrained[s] && wanted[s] != it->second) return {};
    constrained[s] = 1;
    wanted[s] = it->second;
  }
  return query_indices(wanted);
}

std::vector<std::size_t> EntityDatabase::query_indices(
    std::span<const std::optional<std::size_t>> values) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < index_.size(); ++e) {
    bool ok = true;
    for (std::size_t s = 0; s < values.size() && ok; ++s) {
      if (values[s] && index_[e][s] != *values[s]) ok = false;
    }
    if (ok) out.push_back(e);
  }
  return out;
}

std::size_t EntityDatabase::count_indices(std::span<const std::optional<std::size_t>> values) const {
  std::size_t n = 0;
  for (const auto& row : index_) {
    bool ok = true;
    for (std::size_t s = 0; s < values.size() && ok; ++s) {
      if (values[s] && row[s] != *values[s]) ok = false;
    }
    n += ok ? 1 : 0;
  }
  return n;
}

EntityDatabase load_database(const Ontology& ontology, const std::filesystem::path& path) {
  return EntityDatabase::from_json(ontology, read_json(path));
}

std::vector<Entity> generate_entities(const Ontology& ontology, std::size_t count, std::uint64_t seed) {
  static constexpr std::array kAdjectives{"golden", "blue",  "little", "royal",  "old",    "silver",
                                          "green",  "lucky", "grand",  "hidden", "copper", "red"};
  static constexpr std::array kNouns{"dragon", "oak",    "lantern", "anchor", "garden", "fox",
                                     "bridge", "mill",   "harbour", "crown",  "table",  "kettle"};
  static constexpr std::array kStreets{"regent", "mill", "king", "market", "bridge", "station", "castle"};
  Rng rng(seed);
  std::vector<Entity> out;
  std::set<std::string> names;
  while (out.size() < count) {
    Entity e;
    std::string name = std::string("the ") + kAdjectives[rng.index(kAdjectives.size())] + " " +
                       kNouns[rng.index(kNouns.size())];
    if (!names.insert(name).second) name += " " + std::to_string(out.size());
    names.insert(name);
    e[std::string(kNameKey)] = name;
    for (const auto& s : ontology.informable()) e[s.name] = s.values[rng.index(s.values.size())];
    for (const auto& r : ontology.requestable()) {
      if (e.contains(r)) continue;
      std::ostringstream v;
      if (r == "phone") {
        v << "01223 " << 300000 + rng.index(699999);
      } else if (r == "postcode") {
        v << "cb" << 1 + rng.index(5) << " " << rng.index(10) << static_cast<char>('a' + rng.index(26))
          << static_cast<char>('a' + rng.index(26));
      } else if (r == "address") {
        v << 1 + rng.index(120) << " " << kStreets[rng.index(kStreets.size())] << " street";
      } else {
        v << r << "-" << rng.index(1000);
      }
      e[r] = v.str();
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::array<std::string_view, kActTypeCount> kActNames{
    "request", "confirm", "select", "inform", "affirm", "negate",
    "hello",   "bye",     "reqmore", "repeat", "null",   "pass"};
}

std::string_view to_string(ActType t) { return kActNames.at(static_cast<std::size_t>(t)); }

ActType parse_act_type(std::string_view s) {
  for (std::size_t i = 0; i < kActNames.size(); ++i) {
    if (kActNames[i] == s) return static_cast<ActType>(i);
  }
  throw DomainError("unknown act type '" + std::string(s) + "'");
}

void DialogueAct::validate() const {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw DomainError("act confidence outside [0,1]");
  switch (type) {
    case ActType::request:
      if (items.size() != 1 || items[0].slot.empty() || !items[0].value.empty()) {
        throw DomainError("request carries exactly one slot and no value");
      }
      break;
    case ActType::confirm:
      if (items.size() != 1 || items[0].slot.empty() || items[0].value.empty()) {
        throw DomainError("confirm carries exactly one slot-value pair");
      }
      break;
    case ActType::select:
      if (items.size() < 2) throw DomainError("select carries at least two values");
      for (const auto& it : items) {
        if (it.slot != items[0].slot) throw DomainError("select values must share one slot");
      }
      break;
    case ActType::pass:
      if (!items.empty()) throw DomainError("pass carries nothing");
      break;
    default:
      break;
  }
}

std::string DialogueAct::str() const {
  std::string s(to_string(type));
  s += "(";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) s += ",";
    s += items[i].slot;
    if (!items[i].value.empty()) s += "=" + items[i].value;
  }
  return s + ")";
}

nlohmann::json DialogueAct::to_json() const {
  nlohmann::json j{{"act", to_string(type)}, {"items", nlohmann::json::array()}, {"confidence", confidence}};
  for (const auto& it : items) j["items"].push_back({{"slot", it.slot}, {"value", it.value}});
  return j;
}

DialogueAct DialogueAct::from_json(const nlohmann::json& j) {
  DialogueAct a;
  a.type = parse_act_type(j.at("act").get<std::string>());
  for (const auto& it : j.value("items", nlohmann::json::array())) {
    a.items.push_back({it.at("slot").get<std::string>(), it.value("value", "")});
  }
  a.confidence = j.value("confidence", 1.0);
  return a;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::request: return "request";
    case ActionKind::confirm: return "confirm";
    case ActionKind::select: return "select";
    case ActionKind::inform: return "inform";
    case ActionKind::inform_alternatives: return "inform_alternatives";
    case ActionKind::reqmore: return "reqmore";
    case ActionKind::bye: return "bye";
    case ActionKind::repeat: return "repeat";
    case ActionKind::pass: return "pass";
    case ActionKind::delegate_info: return "a_i";
    case ActionKind::delegate_general: return "a_g";
  }
  return "?";
}

std::string SystemAction::str(const Ontology& ontology) const {
  std::string s(to_string(kind));
  if (slot >= 0) s += "-" + ontology.slot(static_cast<std::size_t>(slot)).name;
  return s;
}

SystemActionSpace enumerate_actions(const Ontology& ontology, ArchitectureMode mode) {
  SystemActionSpace space;
  space.mode = mode;
  for (std::size_t s = 0; s < ontology.slot_count(); ++s) {
    const int slot = static_cast<int>(s);
    space.info_actions.push_back({ActionKind::request, slot});
    space.info_actions.push_back({ActionKind::confirm, slot});
    space.info_actions.push_back({ActionKind::select, slot});
  }
  for (auto k : kGeneralKinds) space.general_actions.push_back({k, -1});
  space.master_actions = {{ActionKind::delegate_info, -1}, {ActionKind::delegate_general, -1}};
  if (mode == ArchitectureMode::feudal_baseline) {
    space.info_actions.push_back({ActionKind::pass, -1});
    space.general_actions.push_back({ActionKind::pass, -1});
  } else {
    space.merged_actions = space.general_actions;
    space.merged_actions.push_back({ActionKind::delegate_info, -1});
  }
  return space;
}

std::size_t canonical_action_count(std::size_t slot_count) { return kInfoTypes * slot_count + kGeneralCount; }

std::size_t canonical_action_index(const SystemAction& a, std::size_t slot_count) {
  switch (a.kind) {
    case ActionKind::request: return kInfoTypes * static_cast<std::size_t>(a.slot);
    case ActionKind::confirm: return kInfoTypes * static_cast<std::size_t>(a.slot) + 1;
    case ActionKind::select: return kInfoTypes * static_cast<std::size_t>(a.slot) + 2;
    default: break;
  }
  for (std::size_t g = 0; g < kGeneralCount; ++g) {
    if (kGeneralKinds[g] == a.kind) return kInfoTypes * slot_count + g;
  }
  throw DomainError("action '" + std::string(to_string(a.kind)) + "' has no canonical index");
}

}  // namespace feudalgain
