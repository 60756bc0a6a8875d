// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// The per-node agreement coordinator: three-phase ordering of agreement
// batches, distance attestation, view changes, checkpoints, and the fetch
// protocol for slot data a COMMIT references but the node has not seen.
//
// Message flow per slot: the primary proposes a batch of ops with its own
// results bound into a result tree (PRE-PREPARE); backups recompute the
// version fold, execute their own results, and answer with their result
// trees (PREPARE); once a node holds N - f result sets it judges each
// request's result spread against the group's distance bound and commits a
// signed attestation tree (COMMIT); a slot is ordered at N - f matching
// COMMITs, applied strictly in sequence order.
//
// Two execution strategies share this logic. execute_then_agree (the
// system design) runs inference speculatively from the moment a request
// arrives, batching freely, so agreement overlaps execution.
// agree_then_execute (the measured baseline) starts a slot's execution
// only when the slot reaches the node and keeps one slot in flight, so
// execution sits on the agreement critical path.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "credo/domain.hpp"
#include "credo/engine.hpp"
#include "credo/env.hpp"
#include "credo/fault.hpp"
#include "credo/messages.hpp"
#include "credo/state.hpp"

namespace credo {

/// One node's judgment of one request op's result spread.
struct OpAttestOutcome {
  bool satisfied = false;
  std::set<uint64_t> quorum;  // node indices whose results are within bound
  double diameter = 0.0;
  double epsilon = 0.0;
  distance::DistanceDescriptor descriptor;
};

/// Everything the ordering of one slot produced, handed to the ordered
/// handler (the proxy assembles certificates from it).
struct OrderedSlot {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 h_pp{};
  Hash32 h_ops{};
  uint64_t primary = 0;
  Signature pre_prepare_sig{};
  Hash32 primary_r_root{};
  std::vector<OpEntry> ops;
  std::map<uint64_t, Hash32> r_roots;          // provider node -> R root
  std::map<uint64_t, Signature> prepare_sigs;  // backup provider -> sig
  std::map<uint64_t, CommitMsg> commits;       // validated, includes own
  std::map<uint64_t, std::map<uint64_t, InferenceResult>> results_by_op;
  std::map<uint64_t, OpAttestOutcome> outcomes;  // per ok request op
};

class Coordinator {
 public:
  enum class Strategy : uint8_t {
    execute_then_agree = 0,
    agree_then_execute = 1,
  };

  using OrderedHandler = std::function<void(const OrderedSlot&)>;

  Coordinator(const ClusterConfig& config, uint64_t index, KeyPair key,
              InferenceEngine& engine, Env& env, FaultSpec fault = {},
              Strategy strategy = Strategy::execute_then_agree);

  /// Network input: one frame from a peer. Malformed frames are dropped.
  void on_frame(uint64_t from, ByteView frame);

  /// Local submission from this node's proxy. Every node receives every
  /// request this way (the proxy fans out), so each arms its own liveness
  /// timer and executes speculatively.
  void submit_request(const InferenceRequest& req);
  void submit_group_op(const GroupOp& op);

  void set_ordered_handler(OrderedHandler h) {
    ordered_handler_ = std::move(h);
  }

  uint64_t view() const { return view_; }
  bool is_primary() const { return primary_of(view_) == my_; }
  uint64_t last_ordered() const { return last_ordered_; }
  uint64_t last_stable() const { return last_stable_; }
  uint64_t view_changes_started() const { return view_changes_started_; }
  const StateMachine& committed_state() const { return committed_state_; }
  /// (seq, h_pp) per ordered slot, in order. Honest nodes' logs are always
  /// prefixes of one another.
  const std::vector<std::pair<uint64_t, Hash32>>& ordered_log() const {
    return ordered_log_;
  }
  /// Requests and group ops accepted but not yet covered by an ordered
  /// slot. Nonzero at quiescence means lost liveness.
  size_t unresolved_ops() const { return request_timers_.size(); }

 private:
  struct Slot {
    std::optional<PrePrepareMsg> pre_prepare;
    Hash32 h_pp{};
    bool fold_ok = false;
    bool exec_dispatched = false;
    bool prepare_sent = false;
    bool commit_sent = false;
    bool ordered = false;
    std::set<uint64_t> fetch_pp_from;          // peers already asked for PP
    std::map<uint64_t, PrepareMsg> prepares;   // validated, by sender
    std::vector<PrepareMsg> pending_prepares;  // arrived before PRE-PREPARE
    std::map<uint64_t, Hash32> r_roots;
    std::set<uint64_t> providers;
    // Prepare fetches already sent, keyed (provider, peer asked). One lost
    // response must not wedge the slot; every stalling committer is asked
    // through its own channel.
    std::set<std::pair<uint64_t, uint64_t>> fetched_providers;
    std::map<uint64_t, std::map<uint64_t, InferenceResult>> results_by_op;
    std::map<uint64_t, CommitMsg> commits;   // j == h_pp, manifest rebuilt
    std::vector<CommitMsg> stalled_commits;  // reference unseen results
    std::map<Hash32, std::map<uint64_t, CommitMsg>> foreign_commits;
    std::map<uint64_t, OpAttestOutcome> outcomes;
    std::vector<AttestLeafRef> own_manifest;
  };

  // A proposal whose execution is still in flight (agree_then_execute
  // dispatches the primary's own inference before the batch goes out).
  struct PendingProposal {
    uint64_t view = 0;
    uint64_t seq = 0;
    std::vector<OpEntry> ops;
    std::optional<StateMachine> equiv_base;
    // (request_id, version) executions the proposal still waits on.
    std::set<std::pair<Hash32, uint64_t>> waiting;
  };

  uint64_t primary_of(uint64_t view) const { return view % config_.n(); }
  uint64_t quorum() const { return config_.n() - config_.f; }

  // -- outbound --
  Signature make_sig(const Hash32& digest) const;
  bool outbound_allowed();
  void send_to(uint64_t node, MsgType type, const Bytes& payload);
  void broadcast(MsgType type, const Bytes& payload);

  // -- proposal --
  void try_propose();
  void propose_batch(uint64_t seq, std::vector<OpEntry> ops,
                     std::optional<StateMachine> equiv_base);
  void finalize_proposal();

  // -- slot progression --
  Slot& slot_at(uint64_t seq);
  void accept_pre_prepare(const PrePrepareMsg& msg);
  void process_fold_chain();
  void ensure_slot_execution(uint64_t seq);
  void try_prepare(uint64_t seq);
  void try_attest(uint64_t seq);
  void try_order(uint64_t seq);
  void apply_ordered(uint64_t seq);
  void on_exec_complete();

  // -- inbound handlers --
  void on_pre_prepare_frame(uint64_t from, const PrePrepareMsg& msg);
  void on_prepare_frame(uint64_t from, const PrepareMsg& msg);
  void handle_prepare(const PrepareMsg& msg, bool relayed);
  void on_commit_frame(uint64_t from, const CommitMsg& msg);
  bool try_count_commit(uint64_t seq, const CommitMsg& msg);
  void on_checkpoint_frame(uint64_t from, const CheckpointMsg& msg);
  void on_view_change_frame(uint64_t from, const ViewChangeMsg& msg);
  void on_new_view_frame(uint64_t from, const NewViewMsg& msg);
  void on_fetch_frame(uint64_t from, const FetchRequest& msg);
  void on_fetch_response_frame(uint64_t from, const FetchResponse& msg);

  /// Maps a prepare/pre-prepare results payload onto the batch's ops.
  /// Returns nullopt when any result is unmappable, duplicated, or claims
  /// a different node.
  std::optional<std::map<uint64_t, InferenceResult>> map_results_to_ops(
      const std::vector<OpEntry>& ops,
      const std::vector<InferenceResult>& results, uint64_t provider) const;

  void register_result_set(uint64_t seq, uint64_t provider,
                           const Hash32& r_root,
                           std::map<uint64_t, InferenceResult> by_op);

  /// Records a request first seen inside a proposal (arming its liveness
  /// timer) and queues its execution when this node can run it.
  void ensure_request_known(const InferenceRequest& req);
  void record_equivocation(uint64_t seq, const PrePrepareMsg& a,
                           const PrePrepareMsg& b);
  void rewind_fold();
  void request_fetch_pp(uint64_t seq, const Hash32& j, uint64_t to);
  void request_fetch_prepare(uint64_t seq, const Hash32& j, uint64_t provider,
                             uint64_t to);

  // -- execution scheduling --
  void dispatch_batches(std::vector<ExecutionBatch> batches);
  void arm_flush_timer();

  // -- liveness --
  void arm_op_timer(const Hash32& id);
  void cancel_op_timer(const Hash32& id);
  void on_op_timeout(const Hash32& id);
  void start_view_change(uint64_t target);
  ViewChangeMsg build_view_change(uint64_t target) const;
  void on_quorum_view_changes(uint64_t target);
  bool validate_prepared_proof(const PreparedProof& proof) const;
  bool validate_view_change(const ViewChangeMsg& msg) const;
  void install_view(uint64_t target, const std::vector<PrePrepareMsg>& re);
  void maybe_adopt_foreign(uint64_t seq, const Hash32& j);

  // -- checkpoints --
  void maybe_checkpoint();
  void prune_below(uint64_t stable_seq);

  void trace(const std::string& line) { env_.trace(line); }

  ClusterConfig config_;
  uint64_t my_ = 0;
  KeyPair key_;
  InferenceEngine& engine_;
  Env& env_;
  FaultSpec fault_;
  Strategy strategy_;
  OrderedHandler ordered_handler_;

  uint64_t view_ = 0;
  bool in_view_change_ = false;
  uint64_t vc_target_ = 0;
  uint64_t view_changes_started_ = 0;

  uint64_t next_seq_ = 1;      // next sequence this node would propose
  uint64_t fold_seq_ = 0;      // last slot folded into spec_state_
  uint64_t last_ordered_ = 0;  // slots 1..last_ordered_ applied
  uint64_t last_stable_ = 0;   // newest stable checkpoint

  StateMachine spec_state_;
  StateMachine committed_state_;

  std::map<uint64_t, Slot> slots_;

  // Ops accepted but not yet ordered. The id maps survive view changes so
  // a new primary can re-propose work the old one dropped.
  std::map<Hash32, InferenceRequest> requests_by_id_;
  std::map<Hash32, GroupOp> group_ops_by_id_;
  std::map<Hash32, uint64_t> arrival_;  // id -> arrival counter
  uint64_t arrival_counter_ = 0;
  std::vector<Hash32> pending_ids_;  // not yet placed in a batch, FIFO

  std::optional<PendingProposal> pending_proposal_;
  std::map<uint64_t, Hash32> ordered_h_ops_;  // for view-change re-checks

  std::vector<std::pair<uint64_t, Hash32>> ordered_log_;

  std::map<Hash32, Env::TimerId> request_timers_;
  std::optional<Env::TimerId> flush_timer_;
  std::optional<Env::TimerId> vc_timer_;

  uint64_t exec_busy_until_ = 0;
  // (request_id, version) pairs dispatched but not yet completed. A slot
  // waits for these before declaring its own result missing.
  std::set<std::pair<Hash32, uint64_t>> exec_inflight_;

  std::map<uint64_t, std::map<uint64_t, CheckpointMsg>> checkpoints_;
  std::vector<CheckpointMsg> stable_proof_;
  Hash32 stable_digest_{};

  std::map<uint64_t, std::map<uint64_t, ViewChangeMsg>> view_changes_;
  std::map<uint64_t, std::vector<PrePrepareMsg>> equivocation_;  // by seq

  uint64_t drop_rng_ = 0;
};

}  // namespace credo
