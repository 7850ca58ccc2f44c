#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "feudalgain/feudal_policy.hpp"
#include "feudalgain/reward.hpp"
#include "support.hpp"

using namespace feudalgain;

namespace {

const Ontology& onto() { return fgtest::cr().ontology; }
const EntityDatabase& db() { return fgtest::cr().db; }

TurnEvidence price_mass(std::vector<double> q) {
  auto ev = TurnEvidence::empty(onto());
  for (std::size_t i = 0; i < q.size(); ++i) ev.slot_mass[0][i] = q[i];
  return ev;
}

// request(pricerange) -> inform 0.5/0.3/0.2; confirm(pricerange=cheap) -> affirm 0.9; bye.
Episode worked_episode(bool baseline) {
  const auto& o = onto();
  const auto b0 = initial_belief(o);
  const auto b1 = focus_update(b0, price_mass({0.5, 0.3, 0.2}));
  const auto b2 = focus_update(b1, price_mass({0.9}));
  const auto b3 = focus_update(b2, TurnEvidence::empty(o));

  auto info_turn = [&](const BeliefState& b, const BeliefState& next, ActionKind k, double r) {
    EpisodeTurn t;
    t.belief = b;
    t.next_belief = next;
    t.decision.action = {k, 0};
    t.decision.actor = Actor::info;
    t.decision.top_choice = baseline ? 0 : kGeneralCount;
    t.decision.top_probs = baseline ? std::vector<double>{0.7, 0.3} : std::vector<double>{0, 0, 0.4, 0, 0, 0.6};
    t.decision.top_mask = baseline ? std::vector<char>{1, 1} : std::vector<char>{0, 0, 1, 0, 0, 1};
    t.reward = r;
    return t;
  };
  Episode ep;
  ep.turns.push_back(info_turn(b0, b1, ActionKind::request, -1.0));
  ep.turns.push_back(info_turn(b1, b2, ActionKind::confirm, -1.0));
  EpisodeTurn bye;
  bye.belief = b2;
  bye.next_belief = b3;
  bye.decision.action = {ActionKind::bye, -1};
  bye.decision.actor = Actor::general;
  if (baseline) {
    bye.decision.top_choice = 1;
    bye.decision.top_probs = {0.5, 0.5};
    bye.decision.top_mask = {1, 1};
    bye.decision.general_choice = 3;
    bye.decision.general_probs = {0.25, 0.25, 0.25, 0.25, 0.0, 0.0};
    bye.decision.general_mask = {1, 1, 1, 1, 0, 0};
  } else {
    bye.decision.top_choice = 3;
    bye.decision.top_probs = {0.2, 0.2, 0.2, 0.2, 0, 0.2};
    bye.decision.top_mask = {1, 1, 1, 1, 0, 1};
  }
  bye.reward = 0.0;
  bye.terminal = true;
  ep.turns.push_back(bye);
  ep.end = EndReason::system_bye;
  ep.total_reward = -2.0;
  return ep;
}

}  // namespace

TEST_CASE("masks in the opening state") {
  const auto m = apply_masks(initial_belief(onto()), onto(), true);
  for (std::size_t s = 0; s < onto().slot_count(); ++s) {
    CHECK(m.info_allowed(s, 0));
    CHECK_FALSE(m.info_allowed(s, 1));
    CHECK_FALSE(m.info_allowed(s, 2));
  }
  CHECK(m.general == std::array<char, kGeneralCount>{0, 0, 1, 0, 0});

  const auto off = apply_masks(initial_belief(onto()), onto(), false);
  for (char c : off.info) CHECK(c == 1);
  for (char c : off.general) CHECK(c == 1);
}

TEST_CASE("a confident slot is no longer requested") {
  auto b = focus_update(initial_belief(onto()), price_mass({0.95, 0.05}));
  const auto m = apply_masks(b, onto(), true);
  CHECK_FALSE(m.info_allowed(0, 0));
  CHECK(m.info_allowed(0, 1));
  CHECK(m.info_allowed(0, 2));
  CHECK(m.general[0] == 1);
  CHECK(m.general[1] == 0);
}

TEST_CASE("chosen actions are never masked") {
  const auto& o = onto();
  PolicyConfig fg, base;
  base.mode = PolicyMode::feudal;
  const PolicySet p1(fg, o, 11), p2(base, o, 12);
  Rng rng(77);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    // Random belief: a few random focus updates plus maybe an offer.
    auto b = initial_belief(o);
    const int steps = static_cast<int>(rng.index(4));
    for (int k = 0; k < steps; ++k) {
      auto ev = TurnEvidence::empty(o);
      const auto s = rng.index(o.slot_count());
      ev.slot_mass[s][rng.index(ev.slot_mass[s].size())] = rng.uniform();
      b = focus_update(b, ev);
    }
    if (rng.bernoulli(0.3)) b.offered_entity = rng.index(db().size());
    const auto mask = apply_masks(b, o, true);
    const DecisionContext ctx{o, db(), true, i % 2 == 0};
    const PolicySet& p = i % 3 == 0 ? p2 : p1;
    const auto d = p.decide(b, ctx, rng);
    if (is_info_kind(d.action.kind)) {
      CHECK(mask.info_allowed(static_cast<std::size_t>(d.action.slot), info_type_index(d.action.kind)));
    } else {
      const auto* it = std::find(std::begin(kGeneralKinds), std::end(kGeneralKinds), d.action.kind);
      REQUIRE(it != std::end(kGeneralKinds));
      CHECK(mask.general[static_cast<std::size_t>(it - std::begin(kGeneralKinds))] == 1);
    }
    CHECK(d.top_mask[d.top_choice] == 1);
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("worked episode: information gain rewards for the slot network") {
  const auto& o = onto();
  PolicyConfig cfg;
  const FeatureEncoder enc(o, 25);
  const auto ts = build_transitions(worked_episode(false), cfg, enc, o, db(), true);
  REQUIRE(ts.slot.size() == 2);
  CHECK(ts.slot[0].reward == 1.0);
  CHECK(ts.slot[1].reward == 1.0);
  CHECK(ts.slot[0].action == 0);
  CHECK(ts.slot[1].action == 1);
  CHECK_FALSE(ts.slot[1].terminal);
  for (const auto& t : ts.slot) CHECK(t.slot >= 0);
  REQUIRE(ts.top.size() == 3);
  CHECK(ts.top[0].reward == -1.0);
  CHECK(ts.top[2].reward == 0.0);
  CHECK(ts.top[0].action == kGeneralCount);
  CHECK(ts.general.empty());

  // A higher threshold turns the second step into a penalty.
  cfg.reward.delta = 0.3;
  const auto strict = build_transitions(worked_episode(false), cfg, enc, o, db(), true);
  CHECK(strict.slot[1].reward == -1.0);
}

TEST_CASE("worked episode: extrinsic rewards and a pass tuple in the baseline") {
  const auto& o = onto();
  PolicyConfig cfg;
  cfg.mode = PolicyMode::feudal_nn;
  const FeatureEncoder enc(o, 25);
  const auto ts = build_transitions(worked_episode(true), cfg, enc, o, db(), true);
  REQUIRE(ts.slot.size() == 3);
  CHECK(ts.slot[0].reward == -1.0);
  CHECK(ts.slot[1].reward == -1.0);
  CHECK(ts.slot[2].reward == 0.0);
  CHECK(ts.slot[2].slot == -1);
  CHECK(ts.slot[2].action == 3);
  CHECK(ts.slot[2].terminal);
  REQUIRE(ts.general.size() == 3);
  CHECK(ts.general[0].action == kGeneralCount);  // pass recorded while the info policy acted
  CHECK(ts.general[2].action == 3);

  cfg.pass_tuples = false;
  const auto nopass = build_transitions(worked_episode(true), cfg, enc, o, db(), true);
  CHECK(nopass.slot.size() == 2);
}

TEST_CASE("FeudalGain never stores pass transitions") {
  const auto& d = fgtest::cr();
  PolicyConfig cfg;
  cfg.dqn.batch = 4;
  PolicySet p(cfg, d.ontology, 3);
  DialogueOptions opts;
  opts.train = true;
  for (std::uint64_t i = 0; i < 30; ++i) {
    Rng rng(i);
    const auto ep = run_dialogue(p, EnvProfile::get(3), d.ontology, d.db, rng, opts);
    p.observe(ep, d.ontology, d.db, true, false);
  }
  CHECK(p.info().types() == 3);
  for (std::size_t i = 0; i < p.info().replay().size(); ++i) CHECK(p.info().replay()[i].slot >= 0);

  SlotTransition pass;
  pass.state = p.encoder().encode_slots(initial_belief(d.ontology), d.db);
  pass.next_state = pass.state;
  pass.slot = -1;
  CHECK_THROWS_AS(p.info().store(pass), std::invalid_argument);
}

TEST_CASE("double DQN targets") {
  const auto& o = onto();
  const FeatureEncoder enc(o, 25);
  Rng rng(5);
  nn::NetworkSpec spec{enc.slot_dim(), {8}, 3, nn::Head::dueling, false, nn::Activation::relu, 0.5};
  DqnConfig cfg;
  DqnLearner l(spec, false, cfg, rng);

  SlotTransition t;
  t.state = enc.encode_slots(initial_belief(o), db());
  t.next_state = enc.encode_slots(focus_update(initial_belief(o), price_mass({0.5, 0.3, 0.2})), db());
  t.next_mask = apply_masks(focus_update(initial_belief(o), price_mass({0.5, 0.3, 0.2})), o, true).info;
  t.slot = 0;
  t.reward = 1.0;
  t.terminal = true;
  CHECK(l.td_target(t, nn::NoiseMode::mean, nullptr) == 1.0);

  // Oracle: argmax of the online net over allowed actions, valued by the target net.
  t.terminal = false;
  const nn::Matrix qo = l.online().predict(t.next_state);
  const nn::Matrix qt = l.target().predict(t.next_state);
  double best = -1e300, value = 0.0;
  for (Eigen::Index s = 0; s < qo.cols(); ++s) {
    for (Eigen::Index a = 0; a < 3; ++a) {
      if (!t.next_mask[static_cast<std::size_t>(s * 3 + a)]) continue;
      if (qo(a, s) > best) {
        best = qo(a, s);
        value = qt(a, s);
      }
    }
  }
  CHECK(l.td_target(t, nn::NoiseMode::mean, nullptr) == doctest::Approx(1.0 + 0.99 * value).epsilon(1e-12));
}

TEST_CASE("retrace targets and truncation") {
  // Two steps: q_ret[1] = r1; q_ret[0] = r0 + g (rho1 (q_ret1 - Q1) + V1).
  const auto q = retrace_targets({-1.0, 19.0}, {2.0, 5.0}, {1.0, 4.0}, {1.0, 0.5}, 0.9);
  REQUIRE(q.size() == 2);
  CHECK(q[1] == 19.0);
  CHECK(q[0] == doctest::Approx(-1.0 + 0.9 * (0.5 * (19.0 - 5.0) + 4.0)));
  CHECK(retrace_targets({3.0}, {0.0}, {0.0}, {1.0}, 0.99) == std::vector<double>{3.0});
  CHECK_THROWS(retrace_targets({1.0, 2.0}, {0.0}, {0.0, 0.0}, {1.0, 1.0}, 0.9));
  CHECK(truncated_weight(25.0, 10.0) == 10.0);
  CHECK(truncated_weight(0.4, 10.0) == 0.4);
}

TEST_CASE("masked softmax") {
  const double logits[] = {1.0, 2.0, 3.0};
  const auto p = masked_softmax(logits, 3, {1, 0, 1});
  CHECK(p[1] == 0.0);
  CHECK(p[0] + p[2] == doctest::Approx(1.0));
  CHECK(p[2] / p[0] == doctest::Approx(std::exp(2.0)));
}

TEST_CASE("a merged policy biased towards bye says bye once allowed") {
  const auto& o = onto();
  PolicyConfig cfg;
  PolicySet p(cfg, o, 9);
  // Zero the policy head and give bye a large bias.
  for (auto& prm : p.top().network().parameters()) {
    if (prm.name == "head0.w_mu" || prm.name == "head0.w_sigma" || prm.name == "head0.b_sigma") prm.value->setZero();
    if (prm.name == "head0.b_mu") {
      prm.value->setZero();
      (*prm.value)(3, 0) = 50.0;
    }
  }
  auto b = focus_update(initial_belief(o), price_mass({1.0}));
  b.offered_entity = 0;
  Rng rng(1);
  const DecisionContext ctx{o, db(), true, false};
  CHECK(p.decide(b, ctx, rng).action.kind == ActionKind::bye);
  // Without an offer bye is masked.
  b.offered_entity.reset();
  CHECK(p.decide(b, ctx, rng).action.kind != ActionKind::bye);
}

TEST_CASE("greedy decisions are deterministic and checkpoints round-trip") {
  const auto& d = fgtest::cr();
  for (PolicyMode mode : {PolicyMode::feudalgain, PolicyMode::feudal, PolicyMode::feudal_nn}) {
    PolicyConfig cfg;
    cfg.mode = mode;
    cfg.dqn.batch = 4;
    PolicySet p(cfg, d.ontology, 21);
    DialogueOptions opts;
    opts.train = true;
    for (std::uint64_t i = 0; i < 10; ++i) {
      Rng rng(i);
      p.observe(run_dialogue(p, EnvProfile::get(2), d.ontology, d.db, rng, opts), d.ontology, d.db, true, false);
    }
    const auto j = p.checkpoint(d.ontology);
    const auto back = PolicySet::from_checkpoint(nlohmann::json::parse(j.dump()), d.ontology);
    CHECK(back->kind() == p.kind());
    CHECK(back->checkpoint(d.ontology) == j);
    for (std::uint64_t i = 0; i < 10; ++i) {
      Rng r1(i), r3(i);
      const auto e1 = run_dialogue(p, EnvProfile::get(1), d.ontology, d.db, r1);
      const auto e2 = run_dialogue(*back, EnvProfile::get(1), d.ontology, d.db, r3);
      CHECK(e1.trace(d.ontology).dump() == e2.trace(d.ontology).dump());
    }
  }
  auto other = nlohmann::json::parse(PolicySet(PolicyConfig{}, d.ontology, 1).checkpoint(d.ontology).dump());
  other["version"] = kCheckpointVersion + 1;
  CHECK_THROWS(PolicySet::from_checkpoint(other, d.ontology));
  CHECK(load_policy(pseudo_checkpoint("always_bye"), d.ontology)->kind() == "always_bye");
  CHECK(load_policy(pseudo_checkpoint("scripted_oracle"), d.ontology)->kind() == "scripted_oracle");
}
