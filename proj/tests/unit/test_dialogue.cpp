#include <doctest.h>

#include "feudalgain/dialogue.hpp"
#include "feudalgain/feudal_policy.hpp"
#include "support.hpp"

using namespace feudalgain;

namespace {

/// Keeps asking for the price range; never closes the dialogue.
class StubbornPolicy final : public DialoguePolicy {
 public:
  PolicyDecision decide(const BeliefState&, const DecisionContext&, Rng&) const override {
    PolicyDecision d;
    d.action = {ActionKind::request, 0};
    d.actor = Actor::info;
    return d;
  }
  std::string kind() const override { return "stubborn"; }
};

}  // namespace

TEST_CASE("scripted oracle always succeeds without noise") {
  const auto& d = fgtest::cr();
  const ScriptedOraclePolicy oracle;
  for (int env : {1, 2}) {
    for (std::uint64_t i = 0; i < 500; ++i) {
      Rng rng(i);
      const auto ep = run_dialogue(oracle, EnvProfile::get(env), d.ontology, d.db, rng);
      REQUIRE(ep.success);
      CHECK(ep.total_reward == doctest::Approx(20.0 - static_cast<double>(ep.length())));
    }
  }
}

TEST_CASE("scripted oracle also succeeds on the larger domain") {
  const auto& d = fgtest::sfr();
  const ScriptedOraclePolicy oracle;
  for (std::uint64_t i = 0; i < 300; ++i) {
    Rng rng(i);
    CHECK(run_dialogue(oracle, EnvProfile::get(1), d.ontology, d.db, rng).success);
  }
}

TEST_CASE("always-bye fails in one turn") {
  const auto& d = fgtest::cr();
  const AlwaysByePolicy bye;
  Rng rng(3);
  const auto ep = run_dialogue(bye, EnvProfile::get(1), d.ontology, d.db, rng);
  CHECK_FALSE(ep.success);
  CHECK(ep.length() == 1);
  CHECK(ep.end == EndReason::system_bye);
  CHECK(ep.turns[0].terminal);
  CHECK(ep.total_reward == 0.0);
}

TEST_CASE("hitting the turn cap fails") {
  const auto& d = fgtest::cr();
  UserGoal goal;
  goal.constraints = {{"pricerange", "cheap"}};
  goal.requests = {"phone"};
  goal.patience = 100;
  Rng u(1), p(2);
  const auto ep = run_dialogue(StubbornPolicy{}, EnvProfile::get(1), d.ontology, d.db, goal, u, p);
  CHECK(ep.length() == 25);
  CHECK(ep.end == EndReason::max_turns);
  CHECK_FALSE(ep.success);
  CHECK(ep.total_reward == -24.0);

  goal.patience = 5;
  Rng u2(1), p2(2);
  const auto impatient = run_dialogue(StubbornPolicy{}, EnvProfile::get(1), d.ontology, d.db, goal, u2, p2);
  CHECK(impatient.end == EndReason::patience);
  CHECK_FALSE(impatient.success);
}

TEST_CASE("identical seeds give byte-identical traces") {
  const auto& d = fgtest::cr();
  PolicyConfig cfg;
  const PolicySet a(cfg, d.ontology, 5), b(cfg, d.ontology, 5);
  DialogueOptions opts;
  opts.train = true;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng r1(i), r2(i);
    const auto e1 = run_dialogue(a, EnvProfile::get(3), d.ontology, d.db, r1, opts);
    const auto e2 = run_dialogue(b, EnvProfile::get(3), d.ontology, d.db, r2, opts);
    CHECK(e1.trace(d.ontology).dump() == e2.trace(d.ontology).dump());
  }
}

TEST_CASE("episode length and return stay within bounds") {
  const auto& d = fgtest::cr();
  PolicyConfig fg;
  PolicyConfig base;
  base.mode = PolicyMode::feudal;
  const PolicySet p1(fg, d.ontology, 1), p2(base, d.ontology, 2);
  DialogueOptions opts;
  opts.train = true;
  for (int env = 1; env <= 6; ++env) {
    for (std::uint64_t i = 0; i < 60; ++i) {
      for (const DialoguePolicy* p : {static_cast<const DialoguePolicy*>(&p1), static_cast<const DialoguePolicy*>(&p2)}) {
        Rng rng(i * 7 + static_cast<std::uint64_t>(env));
        const auto ep = run_dialogue(*p, EnvProfile::get(env), d.ontology, d.db, rng, opts);
        CHECK(ep.length() >= 1);
        CHECK(ep.length() <= 25);
        CHECK(ep.total_reward >= -24.0);
        CHECK(ep.total_reward <= 19.0);
        int terminals = 0;
        for (const auto& t : ep.turns) terminals += t.terminal ? 1 : 0;
        CHECK(terminals == 1);
        CHECK(ep.turns.back().terminal);
        for (std::size_t t = 0; t + 1 < ep.turns.size(); ++t) {
          CHECK(ep.turns[t + 1].belief.turn == ep.turns[t].belief.turn + 1);
        }
      }
    }
  }
}

TEST_CASE("realising actions") {
  const auto& d = fgtest::cr();
  const auto& o = d.ontology;
  auto b = initial_belief(o);
  auto ev = TurnEvidence::empty(o);
  ev.slot_mass[0] = {0.5, 0.3, 0.2, 0.0};
  b = focus_update(b, ev);

  const auto req = realise_action({ActionKind::request, 1}, b, o, d.db);
  CHECK(req.act == DialogueAct::request("area"));
  const auto conf = realise_action({ActionKind::confirm, 0}, b, o, d.db);
  CHECK(conf.act == DialogueAct::confirm("pricerange", "cheap"));
  const auto sel = realise_action({ActionKind::select, 0}, b, o, d.db);
  CHECK(sel.act == (DialogueAct{ActType::select, {{"pricerange", "cheap"}, {"pricerange", "moderate"}}}));

  const auto inf = realise_action({ActionKind::inform, -1}, b, o, d.db);
  REQUIRE(inf.entity.has_value());
  CHECK(d.db.entity(*inf.entity).at("pricerange") == "cheap");
  CHECK(inf.act.items.front().slot == "name");

  CHECK(realise_action({ActionKind::bye, -1}, b, o, d.db).act.type == ActType::bye);
  CHECK(realise_action({ActionKind::reqmore, -1}, b, o, d.db).act.type == ActType::reqmore);
  CHECK_THROWS(realise_action({ActionKind::pass, -1}, b, o, d.db));
  CHECK_THROWS(realise_action({ActionKind::delegate_info, -1}, b, o, d.db));

  // Alternatives differ from the offered venue.
  b = apply_system_act(b, inf.action, inf.act, inf.entity, o);
  const auto alt = realise_action({ActionKind::inform_alternatives, -1}, b, o, d.db);
  REQUIRE(alt.entity.has_value());
  CHECK(*alt.entity != *inf.entity);
}
