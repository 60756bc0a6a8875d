// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// The replicated state fold. Agreement fixes a total order of operations;
// this class folds that order into group version maps, chooses the version
// each inference request executes against, and dedups retries. The fold is
// a pure function of the op sequence, so every honest node annotates and
// validates batches identically. The primary runs annotate_batch() when it
// proposes; backups run validate_batch() and refuse any batch whose
// annotations disagree with their own fold, which is what stops a primary
// from steering requests to stale versions.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "credo/domain.hpp"
#include "credo/messages.hpp"

namespace credo {

struct GroupVersions {
  uint64_t last_version = 0;  // highest version ever defined
  std::optional<uint64_t> active;
  std::map<uint64_t, ModelGroup> versions;

  bool operator==(const GroupVersions&) const = default;
};

class StateMachine {
 public:
  /// Computes annotations for a batch the node is about to propose and
  /// advances the state. Requests resolve to the currently active version
  /// (or a rejection); define assigns last_version + 1; activate promotes
  /// the latest defined version and retires the prior active one; retire
  /// retires every version.
  void annotate_batch(std::vector<OpEntry>& ops);

  /// Recomputes the fold for a proposed batch and checks the embedded
  /// annotations. On agreement the state advances and true returns; on any
  /// mismatch the state is untouched and false returns.
  bool validate_batch(const std::vector<OpEntry>& ops);

  /// Advances the fold by one op whose annotations were already validated
  /// (ordered slots replay through this, one op at a time, so the caller
  /// can read pre-op state between ops).
  void apply_ordered_op(const OpEntry& op);

  /// Digest over the full state: group maps plus the dedup set. Equal
  /// digests at equal sequence numbers are the checkpoint agreement target.
  Hash32 digest() const;

  const GroupVersions* group(const std::string& id) const;

  /// Groups with an active version, materialized at that version.
  std::vector<ModelGroup> active_groups() const;

  /// Effective dedup key epsilon for a request under current state.
  /// Override wins; otherwise the active version's default; 0 bits when the
  /// group is unknown.
  uint64_t epsilon_bits(const InferenceRequest& req) const;

  bool operator==(const StateMachine&) const = default;

 private:
  struct Outcome {
    uint64_t version = 0;
    OpStatus status = OpStatus::ok;
    std::string reason;
  };

  Outcome apply(const OpEntry& op);

  std::map<std::string, GroupVersions> groups_;
  // (request_id, effective-epsilon bits) pairs already ordered.
  std::map<Hash32, std::set<uint64_t>> seen_requests_;
  // op_ids of group ops that applied successfully; retries reject.
  std::set<Hash32> seen_group_ops_;
};

}  // namespace credo
