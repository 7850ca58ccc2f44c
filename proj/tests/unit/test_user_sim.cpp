#include <doctest.h>

#include <fstream>
#include <set>

#include "feudalgain/dialogue.hpp"
#include "feudalgain/user_sim.hpp"
#include "support.hpp"

using namespace feudalgain;

namespace {

const Domain& cr() { return fgtest::cr(); }

SystemTurn sys(ActionKind k, DialogueAct act, std::optional<std::size_t> entity = std::nullopt) {
  return {{k, -1}, std::move(act), entity};
}

UserGoal cheap_north_goal() {
  UserGoal g;
  g.constraints = {{"pricerange", "cheap"}, {"area", "north"}};
  g.requests = {"phone"};
  return g;
}

std::size_t find_entity(const Domain& d, const std::vector<SlotValue>& cs) {
  const auto hits = d.db.query(cs);
  REQUIRE_FALSE(hits.empty());
  return hits.front();
}

}  // namespace

TEST_CASE("environment table") {
  const struct {
    int id;
    double e;
    bool masks;
    UserProfile user;
  } rows[] = {{1, 0.0, true, UserProfile::standard},   {2, 0.0, false, UserProfile::standard},
              {3, 0.15, true, UserProfile::standard},  {4, 0.15, false, UserProfile::standard},
              {5, 0.15, true, UserProfile::unfriendly}, {6, 0.30, true, UserProfile::standard}};
  for (const auto& r : rows) {
    const auto env = EnvProfile::get(r.id);
    CHECK(env.semantic_error_rate == r.e);
    CHECK(env.action_masks == r.masks);
    CHECK(env.user == r.user);
  }
  CHECK(EnvProfile::parse("Env3").id == 3);
  CHECK(EnvProfile::parse("6").id == 6);
  CHECK_THROWS(EnvProfile::parse("env7"));
  CHECK_THROWS(EnvProfile::parse("lap"));
}

TEST_CASE("sampled goals satisfy their invariants") {
  for (const Domain* d : {&fgtest::cr(), &fgtest::sfr()}) {
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      Rng rng(seed);
      const auto g = sample_goal(d->ontology, d->db, rng);
      REQUIRE_FALSE(g.constraints.empty());
      std::set<std::string> slots;
      for (const auto& c : g.constraints) {
        CHECK(d->ontology.is_informable(c.slot));
        CHECK(slots.insert(c.slot).second);
      }
      CHECK_FALSE(d->db.query(g.constraints).empty());
      CHECK(g.requests.size() >= 1);
      CHECK(g.requests.size() <= 3);
      for (const auto& r : g.requests) CHECK(d->ontology.requestable_index(r).has_value());
      CHECK(g.patience == 5);
    }
  }
}

TEST_CASE("goal sampling is reproducible (golden goal for seed 7)") {
  std::ifstream in(fgtest::fixture_dir() / "goal_cr_seed7.json");
  REQUIRE(in.good());
  const auto golden = nlohmann::json::parse(in);
  Rng rng(7);
  const auto g = sample_goal(cr().ontology, cr().db, rng);
  CHECK(g.to_json() == golden);
  CHECK(UserGoal::from_json(golden).to_json() == golden);
}

TEST_CASE("agenda keeps bye at the bottom and respects its capacity") {
  const auto goal = cheap_north_goal();
  SimulatedUser user(goal, cr().ontology, cr().db, UserProfile::standard);
  const auto& items = user.agenda().items();
  REQUIRE_FALSE(items.empty());
  CHECK(items.front().type == ActType::bye);
  CHECK(user.agenda().capacity() == 4 * (2 + 1));
  for (std::size_t i = 1; i < items.size(); ++i) CHECK(items[i].type != ActType::bye);

  Agenda a;
  a.set_capacity(2);
  a.push(DialogueAct::of(ActType::bye));
  CHECK_THROWS(a.push(DialogueAct::of(ActType::bye)));
  a.push(DialogueAct::request("phone"));
  a.push(DialogueAct::request("address"));
  CHECK(a.size() == 2);
}

TEST_CASE("user responses follow the goal") {
  const auto& d = cr();
  const auto goal = cheap_north_goal();
  Rng rng(1);
  UserConfig quiet;
  quiet.volunteer_prob = 0.0;

  SUBCASE("request is answered with the goal value") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const auto out = u.respond(sys(ActionKind::request, DialogueAct::request("pricerange")), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == DialogueAct::inform("pricerange", "cheap"));
  }
  SUBCASE("request for an unconstrained slot gives dontcare") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const auto out = u.respond(sys(ActionKind::request, DialogueAct::request("food")), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == DialogueAct::inform("food", std::string(kDontCare)));
  }
  SUBCASE("matching confirm is affirmed") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const auto out = u.respond(sys(ActionKind::confirm, DialogueAct::confirm("pricerange", "cheap")), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0].type == ActType::affirm);
  }
  SUBCASE("wrong confirm is negated with a correction") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const auto out = u.respond(sys(ActionKind::confirm, DialogueAct::confirm("area", "south")), rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0].type == ActType::negate);
    CHECK(out[1] == DialogueAct::inform("area", "north"));
  }
  SUBCASE("select is answered with the goal value") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const DialogueAct sel{ActType::select, {{"area", "north"}, {"area", "east"}}};
    const auto out = u.respond(sys(ActionKind::select, sel), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == DialogueAct::inform("area", "north"));
  }
  SUBCASE("an offer violating a constraint is corrected") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    const auto e = find_entity(d, {{"pricerange", "expensive"}});
    const DialogueAct inf{ActType::inform, {{"name", d.db.entity(e).at("name")}}};
    const auto out = u.respond(sys(ActionKind::inform, inf, e), rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0].type == ActType::negate);
    CHECK(out[1] == DialogueAct::inform("pricerange", "cheap"));
  }
  SUBCASE("a good offer triggers the requests, answering them finishes the dialogue") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    // State both constraints first.
    u.respond(sys(ActionKind::request, DialogueAct::request("pricerange")), rng);
    u.respond(sys(ActionKind::request, DialogueAct::request("area")), rng);
    const auto e = find_entity(d, goal.constraints);
    const auto& ent = d.db.entity(e);
    auto out = u.respond(sys(ActionKind::inform, {ActType::inform, {{"name", ent.at("name")}}}, e), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == DialogueAct::request("phone"));
    CHECK_FALSE(u.satisfied());
    out = u.respond(sys(ActionKind::inform, {ActType::inform, {{"name", ent.at("name")}, {"phone", ent.at("phone")}}}, e),
                    rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0].type == ActType::bye);
    CHECK(u.finished());
    CHECK(u.satisfied());
    CHECK_FALSE(u.gave_up());
  }
  SUBCASE("the user states remaining constraints before saying bye") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    u.respond(sys(ActionKind::request, DialogueAct::request("pricerange")), rng);
    const auto e = find_entity(d, goal.constraints);
    const auto& ent = d.db.entity(e);
    const auto out = u.respond(
        sys(ActionKind::inform, {ActType::inform, {{"name", ent.at("name")}, {"phone", ent.at("phone")}}}, e), rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == DialogueAct::inform("area", "north"));
    CHECK_FALSE(u.finished());
  }
  SUBCASE("system bye ends the dialogue") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    CHECK(u.respond(sys(ActionKind::bye, DialogueAct::of(ActType::bye)), rng).empty());
    CHECK(u.finished());
    CHECK_FALSE(u.satisfied());
  }
  SUBCASE("patience runs out after repeated useless turns") {
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard, quiet);
    std::vector<DialogueAct> out;
    int turns = 0;
    while (!u.finished() && turns < 20) {
      out = u.respond(sys(ActionKind::confirm, DialogueAct::confirm("pricerange", "cheap")), rng);
      ++turns;
    }
    CHECK(u.gave_up());
    CHECK(turns == 5);
    REQUIRE(out.size() == 1);
    CHECK(out[0].type == ActType::bye);
  }
}

TEST_CASE("unfriendly users never volunteer") {
  const auto& d = cr();
  auto goal = cheap_north_goal();
  goal.constraints.push_back({"food", "thai"});
  int nulls = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    Rng rng(static_cast<std::uint64_t>(i));
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::unfriendly);
    CHECK(u.opening(rng).size() == 1);  // hello only
    const auto out = u.respond(sys(ActionKind::reqmore, DialogueAct::of(ActType::reqmore)), rng);
    REQUIRE(out.size() == 1);
    if (out[0].type == ActType::null) {
      ++nulls;
    } else {
      CHECK(out[0] == DialogueAct::inform("pricerange", "cheap"));
    }
  }
  CHECK(static_cast<double>(nulls) / n == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("standard users volunteer at most two constraints per turn") {
  const auto& d = cr();
  auto goal = cheap_north_goal();
  goal.constraints.push_back({"food", "thai"});
  int volunteered = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng rng(static_cast<std::uint64_t>(i));
    SimulatedUser u(goal, d.ontology, d.db, UserProfile::standard);
    const auto open = u.opening(rng);
    CHECK(open.size() <= 3);
    volunteered += static_cast<int>(open.size()) - 1;
  }
  // Two candidates at 0.3 each.
  CHECK(volunteered / 2000.0 == doctest::Approx(0.6).epsilon(0.1));
}

TEST_CASE("error channel") {
  const auto& o = cr().ontology;
  SUBCASE("no errors at rate 0") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
      const auto a = DialogueAct::inform("area", "north");
      const auto out = corrupt(a, 0.0, o, rng);
      CHECK(out.kind == CorruptionKind::none);
      CHECK(out.act.type == a.type);
      CHECK(out.act.items == a.items);
      CHECK(out.act.confidence >= 0.6);
      CHECK(out.act.confidence <= 1.0);
    }
  }
  SUBCASE("value substitution is one third of corruptions") {
    Rng rng(4);
    const int n = 10000;
    int subs = 0;
    for (int i = 0; i < n; ++i) {
      const auto out = corrupt(DialogueAct::inform("area", "north"), 1.0, o, rng);
      CHECK(out.kind != CorruptionKind::none);
      CHECK(out.act.confidence >= 0.2);
      CHECK(out.act.confidence <= 0.7);
      if (out.kind == CorruptionKind::substitute_value) {
        ++subs;
        CHECK(out.act.items.front().value != "north");
        CHECK(o.value_index(1, out.act.items.front().value).has_value());
      }
      if (out.kind == CorruptionKind::null_act) CHECK(out.act.type == ActType::null);
    }
    CHECK(std::abs(static_cast<double>(subs) / n - 1.0 / 3.0) <= 0.02);
  }
  SUBCASE("polarity flips") {
    Rng rng(5);
    bool flipped = false;
    for (int i = 0; i < 100 && !flipped; ++i) {
      const auto out = corrupt(DialogueAct::of(ActType::affirm), 1.0, o, rng);
      if (out.kind == CorruptionKind::flip_polarity) {
        CHECK(out.act.type == ActType::negate);
        flipped = true;
      }
    }
    CHECK(flipped);
  }
  SUBCASE("confidence stays in [0.2, 1]") {
    Rng rng(6);
    for (int i = 0; i < 2000; ++i) {
      const auto out = corrupt(DialogueAct::inform("food", "thai"), 0.3, o, rng);
      CHECK(out.act.confidence >= 0.2);
      CHECK(out.act.confidence <= 1.0);
    }
  }
  SUBCASE("rate outside [0,1] is rejected") {
    Rng rng(1);
    CHECK_THROWS(corrupt(DialogueAct::of(ActType::affirm), 1.5, o, rng));
  }
}
