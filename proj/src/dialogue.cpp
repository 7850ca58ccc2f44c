#include "feudalgain/dialogue.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace feudalgain {

std::vector<std::optional<std::size_t>> belief_constraints(const BeliefState& b) {
  std::vector<std::optional<std::size_t>> out(b.slots.size());
  for (std::size_t s = 0; s < b.slots.size(); ++s) {
    const auto top = b.slots[s].top();
    if (top < b.slots[s].value_count()) out[s] = top;
  }
  return out;
}

namespace {

// Matches for the belief's top values. Drops the least certain constraint
// until something matches.
std::vector<std::size_t> relaxed_matches(const BeliefState& b, const EntityDatabase& db) {
  auto cons = belief_constraints(b);
  auto hits = db.query_indices(cons);
  while (hits.empty()) {
    std::optional<std::size_t> weakest;
    double lowest = 2.0;
    for (std::size_t s = 0; s < cons.size(); ++s) {
      if (!cons[s]) continue;
      const double p = b.slots[s].probs[*cons[s]];
      if (p < lowest) {
        lowest = p;
        weakest = s;
      }
    }
    if (!weakest) break;
    cons[*weakest].reset();
    hits = db.query_indices(cons);
  }
  return hits;
}

DialogueAct describe_entity(std::size_t e, const BeliefState& b, const Ontology& ontology, const EntityDatabase& db) {
  const auto& ent = db.entity(e);
  DialogueAct act{ActType::inform, {}};
  act.items.push_back({std::string(kNameKey), ent.at(std::string(kNameKey))});
  const auto cons = belief_constraints(b);
  for (std::size_t s = 0; s < ontology.slot_count(); ++s) {
    if (cons[s]) act.items.push_back({ontology.slot(s).name, ent.at(ontology.slot(s).name)});
  }
  const auto& req = ontology.requestable();
  for (std::size_t r = 0; r < req.size(); ++r) {
    if (!b.requested[r]) continue;
    const bool listed = std::any_of(act.items.begin(), act.items.end(), [&](const SlotValue& sv) { return sv.slot == req[r]; });
    if (!listed) act.items.push_back({req[r], ent.at(req[r])});
  }
  return act;
}

}  // namespace

SystemTurn realise_action(const SystemAction& action, const BeliefState& b, const Ontology& ontology,
                          const EntityDatabase& db) {
  SystemTurn turn{action, DialogueAct::of(ActType::null), std::nullopt};
  auto slot_name = [&]() -> const std::string& {
    if (action.slot < 0 || static_cast<std::size_t>(action.slot) >= ontology.slot_count()) {
      throw std::invalid_argument("information action without a valid slot");
    }
    return ontology.slot(static_cast<std::size_t>(action.slot)).name;
  };
  auto value_name = [&](std::size_t s, std::size_t v) {
    return v < ontology.slot(s).values.size() ? ontology.slot(s).values[v] : std::string(kDontCare);
  };

  switch (action.kind) {
    case ActionKind::request:
      turn.act = DialogueAct::request(slot_name());
      break;
    case ActionKind::confirm: {
      const auto s = static_cast<std::size_t>(action.slot);
      turn.act = DialogueAct::confirm(slot_name(), value_name(s, b.slot(s).top_informed()));
      break;
    }
    case ActionKind::select: {
      const auto s = static_cast<std::size_t>(action.slot);
      const auto& p = b.slot(s).probs;
      std::vector<std::size_t> order(p.size() - 1);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] > p[y]; });
      turn.act = DialogueAct{ActType::select, {{slot_name(), value_name(s, order[0])}, {slot_name(), value_name(s, order[1])}}};
      break;
    }
    case ActionKind::inform:
    case ActionKind::inform_alternatives: {
      const auto hits = relaxed_matches(b, db);
      if (hits.empty()) {
        turn.act = DialogueAct{ActType::inform, {{std::string(kNameKey), std::string(kNone)}}};
        break;
      }
      std::size_t pick = hits.front();
      if (action.kind == ActionKind::inform) {
        if (b.offered_entity && std::find(hits.begin(), hits.end(), *b.offered_entity) != hits.end()) {
          pick = *b.offered_entity;
        }
      } else if (b.offered_entity) {
        auto it = std::find_if(hits.begin(), hits.end(), [&](std::size_t e) { return e != *b.offered_entity; });
        if (it != hits.end()) pick = *it;
      }
      turn.entity = pick;
      turn.act = describe_entity(pick, b, ontology, db);
      break;
    }
    case ActionKind::reqmore:
      turn.act = DialogueAct::of(ActType::reqmore);
      break;
    case ActionKind::bye:
      turn.act = DialogueAct::of(ActType::bye);
      break;
    case ActionKind::repeat:
      turn.act = DialogueAct::of(ActType::repeat);
      break;
    case ActionKind::pass:
    case ActionKind::delegate_info:
    case ActionKind::delegate_general:
      throw std::invalid_argument("cannot realise abstract action " + std::string(to_string(action.kind)));
  }
  return turn;
}

// ---------------------------------------------------------------------------

PolicyDecision ScriptedOraclePolicy::decide(const BeliefState& b, const DecisionContext& ctx, Rng&) const {
  PolicyDecision d;
  for (std::size_t s = 0; s < b.slots.size(); ++s) {
    if (b.slots[s].top() == b.slots[s].none_index()) {
      d.action = {ActionKind::request, static_cast<int>(s)};
      d.actor = Actor::info;
      return d;
    }
  }
  const bool pending = std::any_of(b.requested.begin(), b.requested.end(), [](char r) { return r != 0; });
  const bool just_informed = b.last_system_action && b.last_system_action->kind == ActionKind::inform;
  if (b.offered_entity && just_informed && !pending && b.last_user_act != ActType::negate &&
      b.last_user_act != ActType::inform) {
    d.action = {ActionKind::bye, -1};
  } else {
    d.action = {ActionKind::inform, -1};
  }
  (void)ctx;
  return d;
}

PolicyDecision AlwaysByePolicy::decide(const BeliefState&, const DecisionContext&, Rng&) const {
  PolicyDecision d;
  d.action = {ActionKind::bye, -1};
  return d;
}

std::string_view to_string(EndReason r) {
  switch (r) {
    case EndReason::system_bye: return "system_bye";
    case EndReason::user_bye: return "user_bye";
    case EndReason::patience: return "patience";
    case EndReason::max_turns: return "max_turns";
  }
  return "?";
}

nlohmann::json Episode::trace(const Ontology& ontology) const {
  nlohmann::json j;
  j["goal"] = goal.to_json();
  j["success"] = success;
  j["total_reward"] = total_reward;
  j["end"] = to_string(end);
  auto acts = [](const std::vector<DialogueAct>& v) {
    auto a = nlohmann::json::array();
    for (const auto& x : v) a.push_back(x.to_json());
    return a;
  };
  j["turns"] = nlohmann::json::array();
  for (const auto& t : turns) {
    nlohmann::json tj;
    tj["belief"] = t.belief.to_json(ontology);
    tj["action"] = t.decision.action.str(ontology);
    tj["system_act"] = t.system_act.to_json();
    tj["user_acts"] = acts(t.user_acts);
    tj["observed_acts"] = acts(t.observed_acts);
    tj["reward"] = t.reward;
    tj["terminal"] = t.terminal;
    j["turns"].push_back(std::move(tj));
  }
  return j;
}

namespace {

std::vector<DialogueAct> observe(const std::vector<DialogueAct>& acts, double error_rate, const Ontology& ontology,
                                 Rng& rng) {
  std::vector<DialogueAct> out;
  out.reserve(acts.size());
  for (const auto& a : acts) out.push_back(corrupt(a, error_rate, ontology, rng).act);
  return out;
}

}  // namespace

Episode run_dialogue(const DialoguePolicy& policy, const EnvProfile& env, const Ontology& ontology,
                     const EntityDatabase& db, const UserGoal& goal, Rng& user_rng, Rng& policy_rng,
                     const DialogueOptions& opts) {
  if (opts.max_turns < 1) throw std::invalid_argument("max_turns must be positive");
  Episode ep;
  ep.goal = goal;
  SimulatedUser user(goal, ontology, db, env.user, opts.user);
  const DecisionContext ctx{ontology, db, env.action_masks, opts.train};

  BeliefState b = initial_belief(ontology);
  {
    const auto observed = observe(user.opening(user_rng), env.semantic_error_rate, ontology, user_rng);
    b = focus_update(b, evidence_from_acts(observed, nullptr, ontology));
  }

  for (int t = 0; t < opts.max_turns; ++t) {
    EpisodeTurn turn;
    turn.belief = b;
    turn.decision = policy.decide(b, ctx, policy_rng);
    const auto sys = realise_action(turn.decision.action, b, ontology, db);
    turn.system_act = sys.act;
    BeliefState next = apply_system_act(b, sys.action, sys.act, sys.entity, ontology);

    bool ended = false;
    if (sys.act.type == ActType::bye) {
      user.respond(sys, user_rng);
      ep.end = EndReason::system_bye;
      ended = true;
      next.turn += 1;
    } else {
      turn.user_acts = user.respond(sys, user_rng);
      turn.observed_acts = observe(turn.user_acts, env.semantic_error_rate, ontology, user_rng);
      next = focus_update(next, evidence_from_acts(turn.observed_acts, &sys.act, ontology));
      if (user.finished()) {
        ep.end = user.gave_up() ? EndReason::patience : EndReason::user_bye;
        ended = true;
      }
    }
    if (t + 1 == opts.max_turns && !ended) {
      ep.end = EndReason::max_turns;
      ended = true;
    }
    if (ended) ep.success = ep.end != EndReason::max_turns && user.satisfied();
    turn.reward = extrinsic_reward(ended, ep.success, opts.reward);
    turn.terminal = ended;
    turn.next_belief = next;
    ep.total_reward += turn.reward;
    ep.turns.push_back(std::move(turn));
    b = std::move(next);
    if (ended) break;
  }
  return ep;
}

Episode run_dialogue(const DialoguePolicy& policy, const EnvProfile& env, const Ontology& ontology,
                     const EntityDatabase& db, Rng& rng, const DialogueOptions& opts) {
  const auto goal = sample_goal(ontology, db, rng, opts.user);
  return run_dialogue(policy, env, ontology, db, goal, rng, rng, opts);
}

}  // namespace feudalgain
