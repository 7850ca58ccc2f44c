#include "feudalgain/user_sim.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "feudalgain/dialogue.hpp"

namespace feudalgain {

EnvProfile EnvProfile::get(int id) {
  switch (id) {
    case 1: return {1, 0.00, true, UserProfile::standard};
    case 2: return {2, 0.00, false, UserProfile::standard};
    case 3: return {3, 0.15, true, UserProfile::standard};
    case 4: return {4, 0.15, false, UserProfile::standard};
    case 5: return {5, 0.15, true, UserProfile::unfriendly};
    case 6: return {6, 0.30, true, UserProfile::standard};
    default: throw std::invalid_argument("environment id must be 1..6, got " + std::to_string(id));
  }
}

EnvProfile EnvProfile::parse(std::string_view name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s.starts_with("env")) s = s.substr(3);
  if (s.size() != 1 || !std::isdigit(static_cast<unsigned char>(s[0]))) {
    throw std::invalid_argument("unknown environment '" + std::string(name) + "'");
  }
  return get(s[0] - '0');
}

const std::string* UserGoal::value_for(std::string_view slot) const {
  for (const auto& c : constraints) {
    if (c.slot == slot) return &c.value;
  }
  return nullptr;
}

nlohmann::json UserGoal::to_json() const {
  nlohmann::json j;
  j["constraints"] = nlohmann::json::array();
  for (const auto& c : constraints) j["constraints"].push_back({{"slot", c.slot}, {"value", c.value}});
  j["requests"] = requests;
  j["patience"] = patience;
  return j;
}

UserGoal UserGoal::from_json(const nlohmann::json& j) {
  UserGoal g;
  for (const auto& c : j.at("constraints")) g.constraints.push_back({c.at("slot"), c.at("value")});
  g.requests = j.at("requests").get<std::vector<std::string>>();
  g.patience = j.value("patience", 5);
  return g;
}

UserGoal sample_goal(const Ontology& ontology, const EntityDatabase& db, Rng& rng, const UserConfig& cfg) {
  if (db.empty()) throw std::invalid_argument("cannot sample a goal from an empty database");
  UserGoal goal;
  goal.patience = cfg.patience;
  bool satisfiable = false;
  for (int attempt = 0; attempt < cfg.max_goal_tries && !satisfiable; ++attempt) {
    goal.constraints.clear();
    for (const auto& slot : ontology.informable()) {
      if (!rng.bernoulli(cfg.constraint_prob)) continue;
      std::string value = rng.bernoulli(cfg.dontcare_prob) ? std::string(kDontCare)
                                                           : slot.values[rng.index(slot.values.size())];
      goal.constraints.push_back({slot.name, std::move(value)});
    }
    if (goal.constraints.empty()) {
      const auto& slot = ontology.slot(rng.index(ontology.slot_count()));
      goal.constraints.push_back({slot.name, slot.values[rng.index(slot.values.size())]});
    }
    satisfiable = !db.query(goal.constraints).empty();
  }
  if (!satisfiable) {
    // Relax: keep the constrained slots but take the values of a real venue.
    const auto e = rng.index(db.size());
    for (auto& c : goal.constraints) {
      if (c.value != kDontCare) c.value = db.entity(e).at(c.slot);
    }
  }

  std::vector<std::string> pool;
  for (const auto& r : ontology.requestable()) {
    if (!goal.value_for(r)) pool.push_back(r);
  }
  const int span = cfg.max_requests - cfg.min_requests + 1;
  const auto want = static_cast<std::size_t>(cfg.min_requests + static_cast<int>(rng.index(static_cast<std::size_t>(span))));
  rng.shuffle(pool.begin(), pool.end());
  pool.resize(std::min(want, pool.size()));
  // Keep ontology order for a stable agenda.
  for (const auto& r : ontology.requestable()) {
    if (std::find(pool.begin(), pool.end(), r) != pool.end()) goal.requests.push_back(r);
  }
  if (goal.requests.empty()) goal.requests.push_back(ontology.requestable().back());
  return goal;
}

// ---------------------------------------------------------------------------

void Agenda::push(DialogueAct act) {
  if (act.type == ActType::bye && !stack_.empty()) throw std::logic_error("bye may only sit at the bottom");
  if (stack_.size() >= capacity_) return;
  stack_.push_back(std::move(act));
}

void Agenda::pop() {
  if (!stack_.empty()) stack_.pop_back();
}

bool Agenda::remove(ActType type, std::string_view slot) {
  for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
    if (it->type == type && !it->items.empty() && it->items.front().slot == slot) {
      stack_.erase(std::next(it).base());
      return true;
    }
  }
  return false;
}

bool Agenda::contains(ActType type, std::string_view slot) const {
  return std::any_of(stack_.begin(), stack_.end(), [&](const DialogueAct& a) {
    return a.type == type && !a.items.empty() && a.items.front().slot == slot;
  });
}

// ---------------------------------------------------------------------------

ChannelOutput corrupt(const DialogueAct& act, double error_rate, const Ontology& ontology, Rng& rng) {
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw std::invalid_argument("error rate must lie in [0,1]");
  ChannelOutput out{act, CorruptionKind::none};
  if (!rng.bernoulli(error_rate)) {
    out.act.confidence = rng.uniform(0.6, 1.0);
    return out;
  }
  out.kind = static_cast<CorruptionKind>(1 + rng.index(3));
  switch (out.kind) {
    case CorruptionKind::substitute_value: {
      // Inapplicable to value-less acts: those pass with low confidence.
      for (auto& item : out.act.items) {
        auto s = ontology.slot_index(item.slot);
        if (!s || item.value.empty()) continue;
        const auto& values = ontology.slot(*s).values;
        auto current = ontology.value_index(*s, item.value);
        std::size_t pick;
        if (current) {
          pick = rng.index(values.size() - 1);
          if (pick >= *current) ++pick;
        } else {
          pick = rng.index(values.size());
        }
        item.value = values[pick];
        break;
      }
      break;
    }
    case CorruptionKind::null_act:
      out.act = DialogueAct::of(ActType::null);
      break;
    case CorruptionKind::flip_polarity:
      if (out.act.type == ActType::affirm) {
        out.act.type = ActType::negate;
      } else if (out.act.type == ActType::negate) {
        out.act.type = ActType::affirm;
      }
      break;
    case CorruptionKind::none:
      break;
  }
  out.act.confidence = rng.uniform(0.2, 0.7);
  return out;
}

// ---------------------------------------------------------------------------

SimulatedUser::SimulatedUser(UserGoal goal, const Ontology& ontology, const EntityDatabase& db,
                             UserProfile profile, UserConfig cfg)
    : goal_(std::move(goal)), ontology_(&ontology), db_(&db), profile_(profile), cfg_(cfg) {
  conveyed_.assign(ontology.slot_count(), 0);
  answered_.assign(goal_.requests.size(), 0);
  agenda_.set_capacity(4 * (goal_.constraints.size() + goal_.requests.size()));
  agenda_.push(DialogueAct::of(ActType::bye));
  for (auto it = goal_.requests.rbegin(); it != goal_.requests.rend(); ++it) agenda_.push(DialogueAct::request(*it));
  for (auto it = goal_.constraints.rbegin(); it != goal_.constraints.rend(); ++it) {
    agenda_.push(DialogueAct::inform(it->slot, it->value));
  }
}

std::optional<std::size_t> SimulatedUser::goal_index(std::size_t slot) const {
  const auto* v = goal_.value_for(ontology_->slot(slot).name);
  if (!v || *v == kDontCare) return std::nullopt;
  return ontology_->value_index(slot, *v);
}

std::string SimulatedUser::goal_string(std::size_t slot) const {
  const auto* v = goal_.value_for(ontology_->slot(slot).name);
  return v ? *v : std::string(kDontCare);
}

std::optional<std::size_t> SimulatedUser::first_violation(std::size_t entity) const {
  for (std::size_t s = 0; s < ontology_->slot_count(); ++s) {
    auto g = goal_index(s);
    if (g && db_->value_of(entity, s) != *g) return s;
  }
  return std::nullopt;
}

bool SimulatedUser::entity_satisfies(std::size_t entity) const { return !first_violation(entity).has_value(); }

bool SimulatedUser::satisfied() const {
  if (!accepted_ || !entity_satisfies(*accepted_)) return false;
  return std::all_of(answered_.begin(), answered_.end(), [](char a) { return a != 0; });
}

bool SimulatedUser::convey(std::size_t slot) {
  const auto& name = ontology_->slot(slot).name;
  agenda_.remove(ActType::inform, name);
  if (conveyed_[slot]) return false;
  conveyed_[slot] = 1;
  return true;
}

void SimulatedUser::reset_answers() {
  std::fill(answered_.begin(), answered_.end(), 0);
  // Requests go back on the agenda just above bye.
  std::vector<DialogueAct> rest(agenda_.items().begin() + 1, agenda_.items().end());
  Agenda fresh;
  fresh.set_capacity(agenda_.capacity());
  fresh.push(DialogueAct::of(ActType::bye));
  for (auto it = goal_.requests.rbegin(); it != goal_.requests.rend(); ++it) fresh.push(DialogueAct::request(*it));
  for (auto& a : rest) {
    if (a.type != ActType::request) fresh.push(std::move(a));
  }
  agenda_ = std::move(fresh);
}

std::vector<DialogueAct> SimulatedUser::pending_requests() const {
  std::vector<DialogueAct> out;
  for (std::size_t i = 0; i < goal_.requests.size(); ++i) {
    if (!answered_[i]) out.push_back(DialogueAct::request(goal_.requests[i]));
  }
  return out;
}

void SimulatedUser::volunteer(std::vector<DialogueAct>& out, Rng& rng) {
  if (profile_ != UserProfile::standard) return;
  int considered = 0;
  for (auto it = agenda_.items().rbegin(); it != agenda_.items().rend() && considered < cfg_.max_volunteer; ++it) {
    if (it->type != ActType::inform) continue;
    const auto& slot = it->items.front().slot;
    const bool already = std::any_of(out.begin(), out.end(), [&](const DialogueAct& a) {
      return a.type == ActType::inform && a.items.front().slot == slot;
    });
    if (already) continue;
    ++considered;
    if (rng.bernoulli(cfg_.volunteer_prob)) out.push_back(*it);
  }
}

std::vector<DialogueAct> SimulatedUser::opening(Rng& rng) {
  std::vector<DialogueAct> out{DialogueAct::of(ActType::hello)};
  volunteer(out, rng);
  for (const auto& a : out) {
    if (a.type == ActType::inform) convey(*ontology_->slot_index(a.items.front().slot));
  }
  return out;
}

std::vector<DialogueAct> SimulatedUser::respond(const SystemTurn& turn, Rng& rng) {
  if (finished_) return {};
  const auto& act = turn.act;
  std::vector<DialogueAct> out;
  bool progress = false;
  bool asked = true;  // the system solicited an answer

  auto slot_of = [&](const DialogueAct& a) -> std::optional<std::size_t> {
    if (a.items.empty()) return std::nullopt;
    return ontology_->slot_index(a.items.front().slot);
  };

  switch (act.type) {
    case ActType::bye:
      finished_ = true;
      return {};
    case ActType::request: {
      auto s = slot_of(act);
      if (s) {
        out.push_back(DialogueAct::inform(ontology_->slot(*s).name, goal_string(*s)));
      } else {
        out.push_back(DialogueAct::of(ActType::null));
      }
      break;
    }
    case ActType::confirm: {
      auto s = slot_of(act);
      if (!s) {
        out.push_back(DialogueAct::of(ActType::null));
        break;
      }
      const auto gv = goal_string(*s);
      if (act.items.front().value == gv) {
        out.push_back(DialogueAct::of(ActType::affirm));
      } else {
        out.push_back(DialogueAct::of(ActType::negate));
        out.push_back(DialogueAct::inform(ontology_->slot(*s).name, gv));
        progress = true;
      }
      break;
    }
    case ActType::select: {
      auto s = slot_of(act);
      if (!s) {
        out.push_back(DialogueAct::of(ActType::null));
        break;
      }
      const auto gv = goal_string(*s);
      const bool offered = std::any_of(act.items.begin(), act.items.end(), [&](const SlotValue& sv) { return sv.value == gv; });
      out.push_back(DialogueAct::inform(ontology_->slot(*s).name, gv));
      if (!offered) progress = true;
      break;
    }
    case ActType::inform: {
      if (!turn.entity) {
        // Nothing offered: restate the first real constraint.
        for (std::size_t s = 0; s < ontology_->slot_count(); ++s) {
          if (goal_index(s)) {
            out.push_back(DialogueAct::inform(ontology_->slot(s).name, goal_string(s)));
            break;
          }
        }
        if (out.empty()) out.push_back(DialogueAct::of(ActType::null));
        break;
      }
      const auto e = *turn.entity;
      if (auto bad = first_violation(e)) {
        if (accepted_) {
          accepted_.reset();
          reset_answers();
        }
        out.push_back(DialogueAct::of(ActType::negate));
        out.push_back(DialogueAct::inform(ontology_->slot(*bad).name, goal_string(*bad)));
        progress = true;
        break;
      }
      if (accepted_ != e) {
        if (accepted_) reset_answers();
        accepted_ = e;
        progress = true;
      }
      for (const auto& item : act.items) {
        for (std::size_t r = 0; r < goal_.requests.size(); ++r) {
          if (!answered_[r] && goal_.requests[r] == item.slot) {
            answered_[r] = 1;
            agenda_.remove(ActType::request, item.slot);
            progress = true;
          }
        }
      }
      auto pending = pending_requests();
      if (pending.empty()) {
        // Bye only once every constraint has been stated.
        auto unstated = std::find_if(agenda_.items().rbegin(), agenda_.items().rend(),
                                     [](const DialogueAct& a) { return a.type == ActType::inform; });
        out.push_back(unstated != agenda_.items().rend() ? *unstated : DialogueAct::of(ActType::bye));
      } else {
        out = std::move(pending);
      }
      break;
    }
    default: {
      // reqmore / repeat / anything else: answer with the top agenda item.
      asked = act.type == ActType::reqmore || act.type == ActType::repeat;
      const auto top = agenda_.top();
      if (top.type == ActType::inform) {
        out.push_back(top);
      } else if (top.type == ActType::request) {
        out = pending_requests();
      } else if (satisfied()) {
        out.push_back(DialogueAct::of(ActType::bye));
      } else {
        out.push_back(DialogueAct::of(ActType::null));
      }
      break;
    }
  }

  const bool says_bye = !out.empty() && out.front().type == ActType::bye;
  if (!says_bye) {
    if (profile_ == UserProfile::unfriendly && asked && rng.bernoulli(cfg_.unfriendly_null_prob)) {
      out = {DialogueAct::of(ActType::null)};
    } else {
      volunteer(out, rng);
    }
  }

  for (const auto& a : out) {
    if (a.type == ActType::inform) {
      if (auto s = slot_of(a); s && convey(*s)) progress = true;
    }
  }

  if (says_bye) {
    finished_ = true;
    return out;
  }
  bad_turns_ = progress ? 0 : bad_turns_ + 1;
  if (bad_turns_ >= goal_.patience) {
    finished_ = true;
    gave_up_ = true;
    return {DialogueAct::of(ActType::bye)};
  }
  return out;
}

}  // namespace feudalgain
