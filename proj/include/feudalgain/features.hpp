#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "feudalgain/belief.hpp"
#include "feudalgain/domain.hpp"

namespace feudalgain {

/// Width of the per-slot summary block.
inline constexpr std::size_t kSlotBlock = 7;
/// DB-match buckets: 0, 1, 2-4, >=5.
inline constexpr std::size_t kDbBuckets = 4;
/// Last-action-type one-hot: request..pass plus "none yet".
inline constexpr std::size_t kLastKinds = 10;

std::size_t db_bucket(std::size_t matches);

/// Turns belief states into network inputs. Every entry lies in [0, 1].
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(const Ontology& ontology, int max_turns);

  std::size_t slot_count() const { return slots_; }
  /// Input width of the slot-shared information network.
  std::size_t slot_dim() const { return slot_dim_; }
  /// Input width of the master / merged / general networks.
  std::size_t master_dim() const { return master_dim_; }

  void slot_block(const BeliefState& b, std::size_t s, double* out) const;
  /// One column per slot.
  Eigen::MatrixXd encode_slots(const BeliefState& b, const EntityDatabase& db) const;
  Eigen::VectorXd encode_master(const BeliefState& b, const EntityDatabase& db) const;

 private:
  std::size_t shared_block(const BeliefState& b, std::size_t matches, double* out) const;

  std::size_t slots_ = 0;
  std::size_t requestables_ = 0;
  std::vector<std::size_t> value_counts_;
  std::size_t max_card_ = 1;
  std::vector<std::size_t> slot_request_index_;  // requestable index of each informable
  std::vector<std::size_t> extra_requests_;      // requestables that are not informable
  int max_turns_ = 25;
  std::size_t slot_dim_ = 0;
  std::size_t master_dim_ = 0;
};

/// Actions allowed in a belief state. `info` is slot-major (request, confirm,
/// select); `general` follows kGeneralKinds.
struct ActionMask {
  std::vector<char> info;
  std::array<char, kGeneralCount> general{};

  bool any_info() const;
  bool any_general() const;
  bool info_allowed(std::size_t slot, std::size_t type) const { return info[slot * kInfoTypes + type] != 0; }
};

/// Rule masks; with `enabled` false every action is allowed.
ActionMask apply_masks(const BeliefState& b, const Ontology& ontology, bool enabled);

/// Type index (0 request, 1 confirm, 2 select) of an info action kind.
std::size_t info_type_index(ActionKind k);
ActionKind info_kind(std::size_t type);

}  // namespace feudalgain
