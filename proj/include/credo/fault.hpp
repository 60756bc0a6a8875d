// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Catalogue of injectable node faults. A fault spec rides into the node's
// coordinator (protocol-level misbehavior) or wraps its executor
// (result corruption); honest nodes run with the default spec. Behaviors
// are deterministic given the seed, so scenarios replay exactly.

#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace credo {

struct FaultSpec {
  enum class Behavior : uint8_t {
    honest = 0,
    // Adds `magnitude` to every output lane of this node's results. The
    // scenario chooses magnitude relative to epsilon: within keeps the
    // result agreeable, beyond forces exclusion.
    corrupt_result = 1,
    // As primary, sends conflicting PRE-PREPAREs to the two halves of the
    // cluster.
    equivocate = 2,
    // Drops every outbound message while this node is the primary.
    mute_primary = 3,
    // Drops each outbound message independently with `probability`.
    drop_fraction = 4,
    // Corrupts every protocol signature this node produces.
    bad_signature = 5,
    // As primary, annotates request ops with a wrong version so honest
    // backups refuse the batch.
    stale_version_primary = 6,
  };

  Behavior behavior = Behavior::honest;
  double magnitude = 0.0;    // corrupt_result
  double probability = 0.0;  // drop_fraction
  uint64_t seed = 0;         // randomness for drop decisions

  bool is_honest() const { return behavior == Behavior::honest; }
};

std::string fault_behavior_name(FaultSpec::Behavior b);
std::optional<FaultSpec::Behavior> fault_behavior_from_name(
    const std::string& name);

}  // namespace credo
