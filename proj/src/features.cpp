#include "feudalgain/features.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "feudalgain/dialogue.hpp"

namespace feudalgain {

std::size_t db_bucket(std::size_t matches) {
  if (matches == 0) return 0;
  if (matches == 1) return 1;
  if (matches <= 4) return 2;
  return 3;
}

FeatureEncoder::FeatureEncoder(const Ontology& ontology, int max_turns)
    : slots_(ontology.slot_count()),
      requestables_(ontology.requestable().size()),
      max_card_(ontology.max_cardinality()),
      max_turns_(max_turns) {
  if (max_turns < 1) throw std::invalid_argument("max_turns must be positive");
  for (std::size_t s = 0; s < slots_; ++s) {
    value_counts_.push_back(ontology.slot(s).values.size());
    slot_request_index_.push_back(*ontology.requestable_index(ontology.slot(s).name));
  }
  for (std::size_t r = 0; r < requestables_; ++r) {
    if (!ontology.is_informable(ontology.requestable()[r])) extra_requests_.push_back(r);
  }
  const std::size_t shared = kDbBuckets + extra_requests_.size() + 2 + kActTypeCount;
  slot_dim_ = kSlotBlock + 1 + kLastKinds + 1 + shared;
  master_dim_ = kSlotBlock * slots_ + kDbBuckets + requestables_ + canonical_action_count(slots_) + 1 + 2 +
                kActTypeCount;
}

void FeatureEncoder::slot_block(const BeliefState& b, std::size_t s, double* out) const {
  const auto& d = b.slot(s);
  const std::size_t n = d.value_count();
  if (n != value_counts_[s]) throw std::invalid_argument("belief does not match the encoder's ontology");
  std::array<double, 3> top{0.0, 0.0, 0.0};
  std::vector<double> vals(d.probs.begin(), d.probs.begin() + static_cast<long>(n));
  std::partial_sort(vals.begin(), vals.begin() + static_cast<long>(std::min<std::size_t>(3, n)), vals.end(),
                    std::greater<>());
  for (std::size_t i = 0; i < std::min<std::size_t>(3, n); ++i) top[i] = vals[i];
  double h = 0.0;
  for (double p : d.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  out[0] = top[0];
  out[1] = top[1];
  out[2] = top[2];
  out[3] = d.dontcare();
  out[4] = d.none();
  out[5] = std::clamp(h / std::log(static_cast<double>(d.probs.size())), 0.0, 1.0);
  out[6] = static_cast<double>(n) / static_cast<double>(max_card_);
}

std::size_t FeatureEncoder::shared_block(const BeliefState& b, std::size_t matches, double* out) const {
  std::size_t k = 0;
  out[k + db_bucket(matches)] = 1.0;
  k += kDbBuckets;
  for (std::size_t r : extra_requests_) out[k++] = b.requested[r] ? 1.0 : 0.0;
  out[k++] = b.offered_entity ? 1.0 : 0.0;
  out[k++] = std::clamp(static_cast<double>(b.turn) / max_turns_, 0.0, 1.0);
  out[k + static_cast<std::size_t>(b.last_user_act)] = 1.0;
  k += kActTypeCount;
  return k;
}

Eigen::MatrixXd FeatureEncoder::encode_slots(const BeliefState& b, const EntityDatabase& db) const {
  if (b.slots.size() != slots_) throw std::invalid_argument("belief does not match the encoder's ontology");
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<long>(slot_dim_), static_cast<long>(slots_));
  const auto matches = db.count_indices(belief_constraints(b));
  const auto& last = b.last_system_action;
  const std::size_t last_kind = last ? static_cast<std::size_t>(last->kind) : kLastKinds - 1;
  for (std::size_t s = 0; s < slots_; ++s) {
    double* col = x.col(static_cast<long>(s)).data();
    slot_block(b, s, col);
    std::size_t k = kSlotBlock;
    col[k++] = (last && last->slot == static_cast<int>(s)) ? 1.0 : 0.0;
    col[k + std::min(last_kind, kLastKinds - 1)] = 1.0;
    k += kLastKinds;
    col[k++] = b.requested[slot_request_index_[s]] ? 1.0 : 0.0;
    shared_block(b, matches, col + k);
  }
  return x;
}

Eigen::VectorXd FeatureEncoder::encode_master(const BeliefState& b, const EntityDatabase& db) const {
  if (b.slots.size() != slots_) throw std::invalid_argument("belief does not match the encoder's ontology");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<long>(master_dim_));
  double* out = x.data();
  std::size_t k = 0;
  for (std::size_t s = 0; s < slots_; ++s, k += kSlotBlock) slot_block(b, s, out + k);
  const auto matches = db.count_indices(belief_constraints(b));
  out[k + db_bucket(matches)] = 1.0;
  k += kDbBuckets;
  for (std::size_t r = 0; r < requestables_; ++r) out[k++] = b.requested[r] ? 1.0 : 0.0;
  const std::size_t actions = canonical_action_count(slots_);
  const auto& last = b.last_system_action;
  const bool concrete = last && last->kind != ActionKind::pass && last->kind != ActionKind::delegate_info &&
                        last->kind != ActionKind::delegate_general;
  out[k + (concrete ? canonical_action_index(*last, slots_) : actions)] = 1.0;
  k += actions + 1;
  out[k++] = b.offered_entity ? 1.0 : 0.0;
  out[k++] = std::clamp(static_cast<double>(b.turn) / max_turns_, 0.0, 1.0);
  out[k + static_cast<std::size_t>(b.last_user_act)] = 1.0;
  return x;
}

// ---------------------------------------------------------------------------

bool ActionMask::any_info() const {
  return std::any_of(info.begin(), info.end(), [](char c) { return c != 0; });
}

bool ActionMask::any_general() const {
  return std::any_of(general.begin(), general.end(), [](char c) { return c != 0; });
}

ActionMask apply_masks(const BeliefState& b, const Ontology& ontology, bool enabled) {
  ActionMask m;
  const std::size_t n = ontology.slot_count();
  m.info.assign(n * kInfoTypes, 1);
  m.general.fill(1);
  if (!enabled) return m;

  bool any_known = false;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& d = b.slot(s);
    const bool unknown = d.top() == d.none_index();
    const double best = d.probs[d.top_informed()];
    if (!unknown) any_known = true;
    m.info[s * kInfoTypes + 0] = best >= 0.8 ? 0 : 1;
    m.info[s * kInfoTypes + 1] = unknown ? 0 : 1;
    m.info[s * kInfoTypes + 2] = unknown ? 0 : 1;
  }
  const bool offered = b.offered_entity.has_value();
  m.general[0] = any_known ? 1 : 0;  // inform
  m.general[1] = offered ? 1 : 0;    // inform_alternatives
  m.general[2] = 1;                  // reqmore
  m.general[3] = offered ? 1 : 0;    // bye
  m.general[4] = 0;                  // repeat
  return m;
}

std::size_t info_type_index(ActionKind k) {
  switch (k) {
    case ActionKind::request: return 0;
    case ActionKind::confirm: return 1;
    case ActionKind::select: return 2;
    default: throw std::invalid_argument("not an information action: " + std::string(to_string(k)));
  }
}

ActionKind info_kind(std::size_t type) {
  static constexpr ActionKind kinds[] = {ActionKind::request, ActionKind::confirm, ActionKind::select};
  if (type >= kInfoTypes) throw std::out_of_range("info action type index");
  return kinds[type];
}

}  // namespace feudalgain
