#include "feudalgain/belief.hpp"

#include <algorithm>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace feudalgain {

std::size_t SlotDistribution::top() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::size_t SlotDistribution::top_informed() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end() - 1) - probs.begin());
}

double SlotDistribution::sum() const {
  double s = 0.0;
  for (double p : probs) s += p;
  return s;
}

nlohmann::json BeliefState::to_json(const Ontology& ontology) const {
  nlohmann::json j;
  j["turn"] = turn;
  j["slots"] = nlohmann::json::object();
  for (const auto& d : slots) j["slots"][ontology.slot(d.slot).name] = d.probs;
  j["requested"] = nlohmann::json::array();
  for (std::size_t r = 0; r < requested.size(); ++r) {
    if (requested[r]) j["requested"].push_back(ontology.requestable()[r]);
  }
  j["last_user_act"] = to_string(last_user_act);
  j["last_system_action"] = last_system_action ? nlohmann::json(last_system_action->str(ontology)) : nullptr;
  j["offered_entity"] = offered_entity ? nlohmann::json(*offered_entity) : nullptr;
  return j;
}

TurnEvidence TurnEvidence::empty(const Ontology& ontology) {
  TurnEvidence ev;
  for (const auto& s : ontology.informable()) ev.slot_mass.emplace_back(s.values.size() + 1, 0.0);
  return ev;
}

double TurnEvidence::mass(std::size_t slot) const {
  double m = 0.0;
  for (double q : slot_mass.at(slot)) m += q;
  return m;
}

BeliefState initial_belief(const Ontology& ontology) {
  BeliefState b;
  for (std::size_t s = 0; s < ontology.slot_count(); ++s) {
    SlotDistribution d{s, std::vector<double>(ontology.slot(s).values.size() + 2, 0.0)};
    d.probs.back() = 1.0;
    b.slots.push_back(std::move(d));
  }
  b.requested.assign(ontology.requestable().size(), 0);
  return b;
}

BeliefState focus_update(const BeliefState& b, const TurnEvidence& ev) {
  if (ev.slot_mass.size() != b.slots.size()) throw std::invalid_argument("evidence slot count mismatch");
  BeliefState out = b;
  for (std::size_t s = 0; s < b.slots.size(); ++s) {
    const auto& q = ev.slot_mass[s];
    auto& p = out.slots[s].probs;
    if (q.size() + 1 != p.size()) throw std::invalid_argument("evidence value count mismatch");
    double m = 0.0;
    for (double x : q) {
      if (x < 0.0) throw std::invalid_argument("negative evidence mass");
      m += x;
    }
    if (m > 1.0 + 1e-9) throw std::invalid_argument("evidence mass exceeds 1");
    m = std::min(m, 1.0);
    if (m == 0.0) continue;
    const double keep = 1.0 - m;
    for (std::size_t v = 0; v < q.size(); ++v) p[v] = q[v] + keep * p[v];
    p.back() = keep * p.back();
  }
  for (std::size_t r : ev.new_requests) {
    if (r >= out.requested.size()) throw std::invalid_argument("evidence references unknown requestable");
    out.requested[r] = 1;
  }
  out.last_user_act = ev.act_type;
  out.turn = b.turn + 1;
  return out;
}

namespace {

struct SlotRef {
  std::size_t slot;
  std::optional<std::size_t> value;  // nullopt means dontcare
};

SlotRef resolve(const Ontology& ontology, const SlotValue& sv) {
  auto s = ontology.slot_index(sv.slot);
  if (!s) throw std::invalid_argument("evidence references unknown slot '" + sv.slot + "'");
  if (sv.value == kDontCare) return {*s, std::nullopt};
  auto v = ontology.value_index(*s, sv.value);
  if (!v) throw std::invalid_argument("evidence references unknown value '" + sv.value + "'");
  return {*s, v};
}

std::size_t column(const Ontology& ontology, const SlotRef& ref) {
  return ref.value ? *ref.value : ontology.slot(ref.slot).values.size();
}

}  // namespace

TurnEvidence evidence_from_acts(std::span<const DialogueAct> acts, const DialogueAct* context,
                                const Ontology& ontology) {
  TurnEvidence ev = TurnEvidence::empty(ontology);
  std::vector<char> informed(ontology.slot_count(), 0);

  // Explicit informs take precedence over affirm/negate on the same slot.
  for (const auto& act : acts) {
    if (act.type != ActType::inform) continue;
    for (const auto& item : act.items) {
      if (!ontology.is_informable(item.slot)) continue;
      const auto ref = resolve(ontology, item);
      auto& row = ev.slot_mass[ref.slot];
      std::fill(row.begin(), row.end(), 0.0);
      row[column(ontology, ref)] = act.confidence;
      informed[ref.slot] = 1;
    }
  }
  const bool confirm_context = context && context->type == ActType::confirm && !context->items.empty();
  for (const auto& act : acts) {
    switch (act.type) {
      case ActType::affirm:
      case ActType::negate: {
        if (!confirm_context) {
          spdlog::debug("{} without a preceding confirm; ignored", to_string(act.type));
          break;
        }
        const auto ref = resolve(ontology, context->items.front());
        if (informed[ref.slot]) break;
        auto& row = ev.slot_mass[ref.slot];
        if (act.type == ActType::affirm) {
          row[column(ontology, ref)] = act.confidence;
        } else {
          // Mass spreads uniformly over the other real values.
          const std::size_t n = ontology.slot(ref.slot).values.size();
          const std::size_t others = ref.value ? n - 1 : n;
          for (std::size_t v = 0; v < n; ++v) {
            if (ref.value && v == *ref.value) continue;
            row[v] = act.confidence / static_cast<double>(others);
          }
        }
        informed[ref.slot] = 1;
        break;
      }
      case ActType::request:
        for (const auto& item : act.items) {
          auto r = ontology.requestable_index(item.slot);
          if (!r) throw std::invalid_argument("request for unknown slot '" + item.slot + "'");
          ev.new_requests.push_back(*r);
        }
        break;
      default:
        break;
    }
  }
  ev.act_type = acts.empty() ? ActType::null : acts.front().type;
  return ev;
}

BeliefState apply_system_act(const BeliefState& b, const SystemAction& action, const DialogueAct& act,
                             std::optional<std::size_t> entity, const Ontology& ontology) {
  BeliefState out = b;
  out.last_system_action = action;
  if (act.type == ActType::inform) {
    if (entity) out.offered_entity = entity;
    for (const auto& item : act.items) {
      if (auto r = ontology.requestable_index(item.slot)) out.requested[*r] = 0;
    }
  }
  return out;
}

}  // namespace feudalgain
