#include "feudalgain/feudal_policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "feudalgain/reward.hpp"

namespace feudalgain {

using nn::NoiseMode;

namespace {

constexpr std::size_t kMergedInfo = kGeneralCount;  // index of a_i in the merged list
constexpr std::size_t kMasterInfo = 0;
constexpr std::size_t kMasterGeneral = 1;
constexpr std::size_t kGeneralPass = kGeneralCount;

std::vector<char> merged_mask(const ActionMask& m) {
  std::vector<char> out(m.general.begin(), m.general.end());
  out.push_back(m.any_info() ? 1 : 0);
  return out;
}

std::vector<char> master_mask(const ActionMask& m) { return {m.any_info() ? char(1) : char(0), m.any_general() ? char(1) : char(0)}; }

std::vector<char> general_mask(const ActionMask& m) {
  std::vector<char> out(m.general.begin(), m.general.end());
  out.push_back(0);  // pass is never chosen, only recorded
  return out;
}

std::size_t sample_or_argmax(const std::vector<double>& p, bool sample, Rng& rng) {
  if (sample) return rng.categorical(std::span<const double>(p));
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

nn::NetworkSpec slot_spec(const PolicyConfig& cfg, const FeatureEncoder& enc) {
  nn::NetworkSpec s;
  s.input_dim = enc.slot_dim();
  s.hidden = cfg.slot_hidden;
  s.outputs = cfg.architecture() == ArchitectureMode::feudal_baseline ? 4 : 3;
  s.head = nn::Head::dueling;
  s.noisy = cfg.noisy();
  s.sigma0 = cfg.sigma0;
  return s;
}

nn::NetworkSpec actor_spec(const PolicyConfig& cfg, const FeatureEncoder& enc, std::size_t outputs) {
  nn::NetworkSpec s;
  s.input_dim = enc.master_dim();
  s.hidden = cfg.master_hidden;
  s.outputs = outputs;
  s.head = nn::Head::policy_logits_plus_q;
  s.noisy = cfg.noisy();
  s.sigma0 = cfg.sigma0;
  return s;
}

}  // namespace

std::string_view to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::feudalgain: return "feudalgain";
    case PolicyMode::feudal: return "feudal";
    case PolicyMode::feudal_nn: return "feudal-nn";
  }
  return "?";
}

PolicyMode parse_policy_mode(std::string_view s) {
  if (s == "feudalgain") return PolicyMode::feudalgain;
  if (s == "feudal") return PolicyMode::feudal;
  if (s == "feudal-nn" || s == "feudal_nn") return PolicyMode::feudal_nn;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "' (feudalgain|feudal|feudal-nn)");
}

std::string PolicyConfig::label() const {
  std::string out(to_string(mode));
  if (!pass_tuples && mode != PolicyMode::feudalgain) out += "-nopass";
  if (!info_gain && mode == PolicyMode::feudalgain) out += "-noig";
  return out;
}

// ---------------------------------------------------------------------------

TransitionSet build_transitions(const Episode& ep, const PolicyConfig& cfg, const FeatureEncoder& enc,
                                const Ontology& ontology, const EntityDatabase& db, bool masks) {
  TransitionSet out;
  const std::size_t T = ep.turns.size();
  if (T == 0) return out;
  const bool baseline = cfg.architecture() == ArchitectureMode::feudal_baseline;

  // Beliefs b_0..b_T; turn t acts on b_t and leads to b_{t+1}.
  std::vector<nn::Matrix> slot_x(T + 1);
  std::vector<std::vector<char>> info_mask(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    const BeliefState& b = t < T ? ep.turns[t].belief : ep.turns[T - 1].next_belief;
    slot_x[t] = enc.encode_slots(b, db);
    info_mask[t] = apply_masks(b, ontology, masks).info;
  }

  for (std::size_t t = 0; t < T; ++t) {
    const auto& turn = ep.turns[t];
    const auto& d = turn.decision;
    const nn::Vector xm = enc.encode_master(turn.belief, db);
    const bool info_acted = d.actor == Actor::info && is_info_kind(d.action.kind) && !d.fallback;

    if (info_acted) {
      SlotTransition st;
      st.state = slot_x[t];
      st.slot = d.action.slot;
      st.action = info_type_index(d.action.kind);
      st.reward = cfg.uses_info_gain()
                      ? thresholded_gain(information_gain(turn.belief, d.action, turn.next_belief, cfg.reward),
                                         cfg.reward.delta)
                      : turn.reward;
      st.next_state = slot_x[t + 1];
      st.next_mask = info_mask[t + 1];
      st.terminal = turn.terminal;
      out.slot.push_back(std::move(st));
    } else if (baseline && cfg.pass_tuples) {
      SlotTransition st;
      st.state = slot_x[t];
      st.slot = -1;
      st.action = 3;
      st.reward = turn.reward;
      st.next_state = slot_x[t + 1];
      st.next_mask = info_mask[t + 1];
      st.terminal = turn.terminal;
      out.slot.push_back(std::move(st));
    }

    if (d.top_probs.empty()) throw std::invalid_argument("episode lacks behaviour probabilities");
    out.top.push_back({xm, d.top_choice, d.top_probs, d.top_mask, turn.reward});

    if (baseline) {
      AcerStep g;
      g.state = xm;
      g.reward = turn.reward;
      if (!d.general_probs.empty()) {
        g.action = d.general_choice;
        g.behaviour = d.general_probs;
        g.mask = d.general_mask;
      } else {
        g.action = kGeneralPass;
        g.behaviour.assign(kGeneralCount + 1, 0.0);
        g.behaviour[kGeneralPass] = 1.0;
        g.mask.assign(kGeneralCount + 1, 0);
        g.mask[kGeneralPass] = 1;
      }
      out.general.push_back(std::move(g));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PolicySet::PolicySet(PolicyConfig cfg, const Ontology& ontology, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      encoder_(ontology, cfg_.max_turns),
      space_(enumerate_actions(ontology, cfg_.architecture())),
      learn_rng_(Rng::derive(seed, {Rng::tag("learn")})),
      epsilon_(cfg_.mode == PolicyMode::feudal ? cfg_.epsilon_start : 0.0) {
  cfg_.reward.validate();
  Rng init = Rng::derive(seed, {Rng::tag("init")});
  const bool baseline = cfg_.architecture() == ArchitectureMode::feudal_baseline;
  info_ = DqnLearner(slot_spec(cfg_, encoder_), baseline, cfg_.dqn, init);
  if (baseline) {
    top_ = AcerLearner(actor_spec(cfg_, encoder_, 2), cfg_.acer, init);
    general_.emplace(actor_spec(cfg_, encoder_, kGeneralCount + 1), cfg_.acer, init);
  } else {
    top_ = AcerLearner(actor_spec(cfg_, encoder_, kGeneralCount + 1), cfg_.acer, init);
  }
}

std::optional<std::pair<std::size_t, std::size_t>> PolicySet::choose_info(const BeliefState& b,
                                                                          const DecisionContext& ctx,
                                                                          const ActionMask& mask, Rng& rng) const {
  if (!mask.any_info()) return std::nullopt;
  if (ctx.train && cfg_.mode == PolicyMode::feudal && rng.bernoulli(epsilon_)) {
    std::vector<std::size_t> allowed;
    for (std::size_t i = 0; i < mask.info.size(); ++i) {
      if (mask.info[i]) allowed.push_back(i);
    }
    const auto pick = allowed[rng.index(allowed.size())];
    return std::pair{pick / kInfoTypes, pick % kInfoTypes};
  }
  const auto x = encoder_.encode_slots(b, ctx.db);
  const bool sample = ctx.train && cfg_.noisy();
  const auto q = info_.q_values(x, sample ? NoiseMode::sample : NoiseMode::mean, sample ? &rng : nullptr);
  return DqnLearner::best(q, mask.info);
}

PolicyDecision PolicySet::decide(const BeliefState& b, const DecisionContext& ctx, Rng& rng) const {
  PolicyDecision d;
  const ActionMask mask = apply_masks(b, ctx.ontology, ctx.masks);
  const auto xm = encoder_.encode_master(b, ctx.db);
  const bool sample_noise = ctx.train && cfg_.noisy();
  const NoiseMode mode = sample_noise ? NoiseMode::sample : NoiseMode::mean;
  Rng* noise = sample_noise ? &rng : nullptr;

  auto delegate_info = [&]() {
    if (auto pick = choose_info(b, ctx, mask, rng)) {
      d.action = {info_kind(pick->second), static_cast<int>(pick->first)};
      d.actor = Actor::info;
    } else {
      spdlog::debug("information policy chosen with every information action masked; falling back to reqmore");
      d.action = {ActionKind::reqmore, -1};
      d.actor = Actor::general;
      d.fallback = true;
    }
  };

  if (cfg_.architecture() == ArchitectureMode::feudalgain) {
    d.top_mask = merged_mask(mask);
    d.top_probs = top_.policy(xm, d.top_mask, mode, noise);
    d.top_choice = sample_or_argmax(d.top_probs, ctx.train, rng);
    if (d.top_choice == kMergedInfo) {
      delegate_info();
    } else {
      d.action = space_.merged_actions[d.top_choice];
      d.actor = Actor::general;
    }
    return d;
  }

  d.top_mask = master_mask(mask);
  d.top_probs = top_.policy(xm, d.top_mask, mode, noise);
  d.top_choice = sample_or_argmax(d.top_probs, ctx.train, rng);
  if (d.top_choice == kMasterInfo) {
    delegate_info();
  } else {
    d.general_mask = general_mask(mask);
    d.general_probs = general_->policy(xm, d.general_mask, mode, noise);
    d.general_choice = sample_or_argmax(d.general_probs, ctx.train, rng);
    d.action = space_.general_actions[d.general_choice];
    d.actor = Actor::general;
  }
  (void)kMasterGeneral;
  return d;
}

UpdateStats PolicySet::observe(const Episode& ep, const Ontology& ontology, const EntityDatabase& db, bool masks,
                               bool log_loss) {
  UpdateStats stats;
  auto ts = build_transitions(ep, cfg_, encoder_, ontology, db, masks);
  stats.slot_transitions = ts.slot.size();
  for (auto& t : ts.slot) info_.store(std::move(t));
  const NoiseMode mode = cfg_.noisy() ? NoiseMode::sample : NoiseMode::mean;
  stats.slot_updates = info_.update(learn_rng_, mode);
  top_.observe(std::move(ts.top), learn_rng_, mode);
  if (general_) general_->observe(std::move(ts.general), learn_rng_, mode);
  if (log_loss && stats.slot_updates > 0) {
    stats.slot_loss = info_.replay_loss(learn_rng_);
    if (stats.slot_loss && !std::isfinite(*stats.slot_loss)) {
      throw std::runtime_error("non-finite information-policy loss after dialogue " + std::to_string(dialogues_ + 1));
    }
  }
  ++dialogues_;
  return stats;
}

nlohmann::json PolicySet::checkpoint(const Ontology& ontology) const {
  nlohmann::json j;
  j["format"] = "feudalgain-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = "policy_set";
  j["ontology"] = ontology.name();
  j["slots"] = ontology.slot_count();
  j["mode"] = to_string(cfg_.mode);
  j["pass_tuples"] = cfg_.pass_tuples;
  j["info_gain"] = cfg_.info_gain;
  j["master_hidden"] = cfg_.master_hidden;
  j["slot_hidden"] = cfg_.slot_hidden;
  j["sigma0"] = cfg_.sigma0;
  j["max_turns"] = cfg_.max_turns;
  j["delta"] = cfg_.reward.delta;
  j["dialogues"] = dialogues_;
  j["networks"]["info"] = info_.to_json();
  j["networks"]["top"] = top_.to_json();
  if (general_) j["networks"]["general"] = general_->to_json();
  return j;
}

namespace {

void check_header(const nlohmann::json& j) {
  if (j.value("format", "") != "feudalgain-checkpoint") throw std::runtime_error("not a feudalgain checkpoint");
  const int version = j.value("version", 0);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
}

}  // namespace

std::unique_ptr<PolicySet> PolicySet::from_checkpoint(const nlohmann::json& j, const Ontology& ontology) {
  check_header(j);
  if (j.at("kind") != "policy_set") throw std::runtime_error("checkpoint does not hold a trained policy");
  if (j.at("ontology").get<std::string>() != ontology.name() || j.at("slots").get<std::size_t>() != ontology.slot_count()) {
    throw std::runtime_error("checkpoint was trained on ontology '" + j.at("ontology").get<std::string>() +
                             "', not '" + ontology.name() + "'");
  }
  PolicyConfig cfg;
  cfg.mode = parse_policy_mode(j.at("mode").get<std::string>());
  cfg.pass_tuples = j.at("pass_tuples");
  cfg.info_gain = j.at("info_gain");
  cfg.master_hidden = j.at("master_hidden").get<std::vector<std::size_t>>();
  cfg.slot_hidden = j.at("slot_hidden").get<std::vector<std::size_t>>();
  cfg.sigma0 = j.at("sigma0");
  cfg.max_turns = j.at("max_turns");
  cfg.reward.delta = j.at("delta");
  auto ps = std::make_unique<PolicySet>(cfg, ontology, 0);
  const auto& nets = j.at("networks");
  ps->info_.load_json(nets.at("info"));
  ps->top_.load_json(nets.at("top"));
  if (ps->general_) ps->general_->load_json(nets.at("general"));
  ps->dialogues_ = j.value("dialogues", std::size_t{0});
  return ps;
}

nlohmann::json pseudo_checkpoint(std::string_view kind) {
  if (kind != "scripted_oracle" && kind != "always_bye") {
    throw std::invalid_argument("unknown pseudo-checkpoint '" + std::string(kind) + "'");
  }
  return {{"format", "feudalgain-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

std::unique_ptr<DialoguePolicy> load_policy(const nlohmann::json& j, const Ontology& ontology) {
  check_header(j);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "scripted_oracle") return std::make_unique<ScriptedOraclePolicy>();
  if (kind == "always_bye") return std::make_unique<AlwaysByePolicy>();
  if (kind == "policy_set") return PolicySet::from_checkpoint(j, ontology);
  throw std::runtime_error("unknown checkpoint kind '" + kind + "'");
}

}  // namespace feudalgain
