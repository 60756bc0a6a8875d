// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/fault.hpp"

namespace credo {

std::string fault_behavior_name(FaultSpec::Behavior b) {
  switch (b) {
    case FaultSpec::Behavior::honest: return "honest";
    case FaultSpec::Behavior::corrupt_result: return "corrupt_result";
    case FaultSpec::Behavior::equivocate: return "equivocate";
    case FaultSpec::Behavior::mute_primary: return "mute_primary";
    case FaultSpec::Behavior::drop_fraction: return "drop_fraction";
    case FaultSpec::Behavior::bad_signature: return "bad_signature";
    case FaultSpec::Behavior::stale_version_primary:
      return "stale_version_primary";
  }
  return "unknown";
}

std::optional<FaultSpec::Behavior> fault_behavior_from_name(
    const std::string& name) {
  for (uint8_t b = 0; b <= 6; b++) {
    auto behavior = static_cast<FaultSpec::Behavior>(b);
    if (fault_behavior_name(behavior) == name) return behavior;
  }
  return std::nullopt;
}

}  // namespace credo
