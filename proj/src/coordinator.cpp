// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/coordinator.hpp"

#include <algorithm>
#include <utility>

namespace credo {

namespace {

std::string hex8(const Hash32& h) {
  return to_hex(ByteView(h.data.data(), 4));
}

template <typename Msg>
Bytes encode_msg(const Msg& m) {
  Encoder e;
  m.encode(e);
  return std::move(e).take();
}

// Consecutive ok request ops sharing a (group, version), chunked to the
// execution batch limit. Order within a chunk is batch order.
std::vector<ExecutionBatch> adjacency_batches(
    const std::vector<const InferenceRequest*>& reqs,
    const std::vector<uint64_t>& versions, uint64_t batch_max) {
  std::vector<ExecutionBatch> out;
  for (size_t i = 0; i < reqs.size(); i++) {
    bool fresh = out.empty() || out.back().group_id != reqs[i]->group_id ||
                 out.back().group_version != versions[i] ||
                 out.back().requests.size() >= batch_max;
    if (fresh) {
      ExecutionBatch b;
      b.group_id = reqs[i]->group_id;
      b.group_version = versions[i];
      out.push_back(std::move(b));
    }
    out.back().requests.push_back(*reqs[i]);
  }
  return out;
}

}  // namespace

Coordinator::Coordinator(const ClusterConfig& config, uint64_t index,
                         KeyPair key, InferenceEngine& engine, Env& env,
                         FaultSpec fault, Strategy strategy)
    : config_(config),
      my_(index),
      key_(std::move(key)),
      engine_(engine),
      env_(env),
      fault_(fault),
      strategy_(strategy) {
  drop_rng_ = fault_.seed * 0x9E3779B97F4A7C15ULL ^ (my_ + 1);
  if (drop_rng_ == 0) drop_rng_ = 0x2545F4914F6CDD1DULL;
}

// ---- outbound ----

Signature Coordinator::make_sig(const Hash32& digest) const {
  Signature sig = key_.sign(digest);
  if (fault_.behavior == FaultSpec::Behavior::bad_signature) {
    sig[0] ^= 0xFF;
  }
  return sig;
}

bool Coordinator::outbound_allowed() {
  switch (fault_.behavior) {
    case FaultSpec::Behavior::mute_primary:
      return primary_of(view_) != my_;
    case FaultSpec::Behavior::drop_fraction: {
      drop_rng_ ^= drop_rng_ << 13;
      drop_rng_ ^= drop_rng_ >> 7;
      drop_rng_ ^= drop_rng_ << 17;
      double coin =
          static_cast<double>(drop_rng_ >> 11) * 0x1.0p-53;
      return coin >= fault_.probability;
    }
    default:
      return true;
  }
}

void Coordinator::send_to(uint64_t node, MsgType type, const Bytes& payload) {
  if (node == my_) return;
  if (!outbound_allowed()) return;
  env_.send(node, frame_message(type, payload));
}

void Coordinator::broadcast(MsgType type, const Bytes& payload) {
  for (uint64_t i = 0; i < config_.n(); i++) {
    send_to(i, type, payload);
  }
}

// ---- inbound dispatch ----

void Coordinator::on_frame(uint64_t from, ByteView frame) {
  Frame f;
  try {
    f = parse_frame(frame);
  } catch (const std::exception&) {
    return;
  }
  try {
    Decoder d(f.payload);
    switch (f.type) {
      case MsgType::client_request: {
        InferenceRequest req = InferenceRequest::decode(d);
        d.expect_done();
        submit_request(req);
        return;
      }
      case MsgType::group_op: {
        GroupOp op = GroupOp::decode(d);
        d.expect_done();
        submit_group_op(op);
        return;
      }
      case MsgType::pre_prepare: {
        PrePrepareMsg m = PrePrepareMsg::decode(d);
        d.expect_done();
        on_pre_prepare_frame(from, m);
        return;
      }
      case MsgType::prepare: {
        PrepareMsg m = PrepareMsg::decode(d);
        d.expect_done();
        on_prepare_frame(from, m);
        return;
      }
      case MsgType::commit: {
        CommitMsg m = CommitMsg::decode(d);
        d.expect_done();
        on_commit_frame(from, m);
        return;
      }
      case MsgType::checkpoint: {
        CheckpointMsg m = CheckpointMsg::decode(d);
        d.expect_done();
        on_checkpoint_frame(from, m);
        return;
      }
      case MsgType::view_change: {
        ViewChangeMsg m = ViewChangeMsg::decode(d);
        d.expect_done();
        on_view_change_frame(from, m);
        return;
      }
      case MsgType::new_view: {
        NewViewMsg m = NewViewMsg::decode(d);
        d.expect_done();
        on_new_view_frame(from, m);
        return;
      }
      case MsgType::fetch: {
        FetchRequest m = FetchRequest::decode(d);
        d.expect_done();
        on_fetch_frame(from, m);
        return;
      }
      case MsgType::fetch_response: {
        FetchResponse m = FetchResponse::decode(d);
        d.expect_done();
        on_fetch_response_frame(from, m);
        return;
      }
      default:
        // Client-to-proxy RPC frames are handled by ProxyCore, not here.
        return;
    }
  } catch (const std::exception&) {
    // Malformed payloads are dropped; the sender is lying or broken.
  }
}

// ---- submission ----

void Coordinator::submit_request(const InferenceRequest& req) {
  if (!verify_request(req)) return;
  if (requests_by_id_.count(req.request_id)) return;
  requests_by_id_[req.request_id] = req;
  arrival_[req.request_id] = arrival_counter_++;
  pending_ids_.push_back(req.request_id);
  arm_op_timer(req.request_id);
  if (strategy_ == Strategy::execute_then_agree) {
    auto outcome = engine_.submit(req, env_.now_us());
    dispatch_batches(std::move(outcome.ready));
    arm_flush_timer();
  }
  try_propose();
}

void Coordinator::submit_group_op(const GroupOp& op) {
  if (!verify_group_op(op)) return;
  Hash32 id = op.op_id();
  if (group_ops_by_id_.count(id)) return;
  group_ops_by_id_[id] = op;
  arrival_[id] = arrival_counter_++;
  pending_ids_.push_back(id);
  arm_op_timer(id);
  try_propose();
}

// ---- proposal ----

void Coordinator::try_propose() {
  if (primary_of(view_) != my_ || in_view_change_) return;
  while (true) {
    if (pending_proposal_) return;
    uint64_t pipeline =
        strategy_ == Strategy::agree_then_execute ? 1 : config_.agree_pipeline;
    if (next_seq_ - 1 - last_ordered_ >= pipeline) return;
    if (fold_seq_ != next_seq_ - 1) return;
    if (pending_ids_.empty()) return;

    size_t take =
        std::min<size_t>(pending_ids_.size(), config_.agree_batch_max);
    std::vector<Hash32> batch_ids(pending_ids_.begin(),
                                  pending_ids_.begin() + take);

    // The fold decides each request's version, and the version decides
    // whether this node's own result exists yet. Deferring an op changes
    // the fold for the rest, so annotate, defer, and repeat to fixpoint.
    std::vector<OpEntry> ops;
    std::set<std::pair<Hash32, uint64_t>> exec_wanted;
    bool dropped_any = false;
    while (true) {
      ops.clear();
      ops.reserve(batch_ids.size());
      for (const Hash32& id : batch_ids) {
        auto rit = requests_by_id_.find(id);
        if (rit != requests_by_id_.end()) {
          OpEntry op;
          op.kind = OpKind::request_inf;
          op.request = rit->second;
          ops.push_back(std::move(op));
        } else {
          const GroupOp& g = group_ops_by_id_.at(id);
          OpEntry op;
          op.kind = g.kind;
          op.group_op = g;
          ops.push_back(std::move(op));
        }
      }
      StateMachine scratch = spec_state_;
      scratch.annotate_batch(ops);

      std::vector<Hash32> drop_ids;
      std::vector<Hash32> defer_ids;
      for (const OpEntry& op : ops) {
        if (op.kind != OpKind::request_inf) continue;
        const InferenceRequest& req = *op.request;
        if (op.status == OpStatus::rejected && op.reason == "duplicate") {
          drop_ids.push_back(req.request_id);
          continue;
        }
        if (op.status != OpStatus::ok) continue;
        if (engine_.results().get(req.request_id, op.version)) continue;
        bool fits = false;
        if (const GroupVersions* gv = scratch.group(req.group_id)) {
          auto vit = gv->versions.find(op.version);
          if (vit != gv->versions.end()) {
            fits = vit->second.models.front().input_dim == req.input.size();
          }
        }
        if (!fits || !engine_.is_resident(req.group_id, op.version)) {
          continue;  // no result will ever come; propose a missing leaf
        }
        exec_wanted.insert({req.request_id, op.version});
        if (strategy_ == Strategy::execute_then_agree) {
          defer_ids.push_back(req.request_id);
        }
      }
      for (const Hash32& id : drop_ids) {
        std::erase(batch_ids, id);
        std::erase(pending_ids_, id);
        dropped_any = true;
      }
      if (drop_ids.empty() && defer_ids.empty()) break;
      for (const Hash32& id : defer_ids) std::erase(batch_ids, id);
    }

    // Launch executions this node can run but has not finished, deferred
    // ops included, so the results exist when their batch is proposed.
    std::set<std::string> flushed;
    std::vector<const InferenceRequest*> reqs;
    std::vector<uint64_t> versions;
    for (const auto& [id, version] : exec_wanted) {
      if (exec_inflight_.count({id, version})) continue;
      const InferenceRequest& req = requests_by_id_.at(id);
      if (flushed.insert(req.group_id + "\x1f" + std::to_string(version))
              .second) {
        dispatch_batches(engine_.flush_version(req.group_id, version));
      }
    }
    for (const auto& [id, version] : exec_wanted) {
      if (exec_inflight_.count({id, version})) continue;
      if (engine_.results().get(id, version)) continue;
      reqs.push_back(&requests_by_id_.at(id));
      versions.push_back(version);
    }
    dispatch_batches(adjacency_batches(reqs, versions, config_.exec_batch_max));

    if (batch_ids.empty()) {
      if (dropped_any) continue;  // window shrank; fresh candidates exist
      return;  // everything waits on execution; completion re-enters
    }

    std::optional<StateMachine> equiv_base;
    if (fault_.behavior == FaultSpec::Behavior::equivocate) {
      equiv_base = spec_state_;
    }
    spec_state_.annotate_batch(ops);
    uint64_t seq = next_seq_++;
    fold_seq_ = seq;
    for (const Hash32& id : batch_ids) std::erase(pending_ids_, id);

    if (strategy_ == Strategy::agree_then_execute) {
      PendingProposal pending;
      pending.view = view_;
      pending.seq = seq;
      pending.ops = std::move(ops);
      pending.equiv_base = std::move(equiv_base);
      for (const auto& key : exec_wanted) {
        if (exec_inflight_.count(key)) pending.waiting.insert(key);
      }
      if (pending.waiting.empty()) {
        propose_batch(seq, std::move(pending.ops),
                      std::move(pending.equiv_base));
        continue;
      }
      pending_proposal_ = std::move(pending);
      return;
    }

    propose_batch(seq, std::move(ops), std::move(equiv_base));
  }
}

void Coordinator::finalize_proposal() {
  if (!pending_proposal_) return;
  if (pending_proposal_->view != view_ || in_view_change_) {
    pending_proposal_.reset();
    return;
  }
  PendingProposal pp = std::move(*pending_proposal_);
  pending_proposal_.reset();
  propose_batch(pp.seq, std::move(pp.ops), std::move(pp.equiv_base));
  try_propose();
}

void Coordinator::propose_batch(uint64_t seq, std::vector<OpEntry> ops,
                                std::optional<StateMachine> equiv_base) {
  if (fault_.behavior == FaultSpec::Behavior::stale_version_primary) {
    for (OpEntry& op : ops) {
      if (op.kind == OpKind::request_inf && op.status == OpStatus::ok) {
        op.version = op.version > 1 ? op.version - 1 : op.version + 1;
      }
    }
  }

  std::map<uint64_t, InferenceResult> own;
  for (size_t k = 0; k < ops.size(); k++) {
    const OpEntry& op = ops[k];
    if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) continue;
    if (auto r = engine_.results().get(op.request->request_id, op.version)) {
      own[k] = std::move(*r);
    }
  }

  PrePrepareMsg msg;
  msg.view = view_;
  msg.seq = seq;
  msg.h_ops = hash_ops(ops);
  msg.r_root = build_result_tree(view_, seq, ops, own).root();
  msg.sig = make_sig(
      pre_prepare_signing_digest(msg.view, msg.seq, msg.h_ops, msg.r_root));
  msg.ops = std::move(ops);
  for (auto& [k, r] : own) msg.results.push_back(r);

  Slot& slot = slot_at(seq);
  slot.pre_prepare = msg;
  slot.h_pp = msg.msg_hash();
  slot.fold_ok = true;
  slot.prepare_sent = true;
  slot.exec_dispatched = true;
  register_result_set(seq, my_, msg.r_root, std::move(own));

  trace("propose seq=" + std::to_string(seq) + " ops=" +
        std::to_string(msg.ops.size()) + " hpp=" + hex8(slot.h_pp));

  if (fault_.behavior == FaultSpec::Behavior::equivocate) {
    PrePrepareMsg alt;
    alt.view = view_;
    alt.seq = seq;
    if (msg.ops.size() >= 2 && equiv_base) {
      alt.ops = msg.ops;
      std::reverse(alt.ops.begin(), alt.ops.end());
      for (OpEntry& op : alt.ops) {
        op.version = 0;
        op.status = OpStatus::ok;
        op.reason.clear();
      }
      StateMachine base = *equiv_base;
      base.annotate_batch(alt.ops);
    }
    std::map<uint64_t, InferenceResult> alt_own;
    for (size_t k = 0; k < alt.ops.size(); k++) {
      const OpEntry& op = alt.ops[k];
      if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) {
        continue;
      }
      if (auto r =
              engine_.results().get(op.request->request_id, op.version)) {
        alt_own[k] = std::move(*r);
      }
    }
    alt.h_ops = hash_ops(alt.ops);
    alt.r_root = build_result_tree(view_, seq, alt.ops, alt_own).root();
    alt.sig = make_sig(
        pre_prepare_signing_digest(alt.view, alt.seq, alt.h_ops, alt.r_root));
    for (auto& [k, r] : alt_own) alt.results.push_back(r);

    Bytes enc_a = encode_msg(msg);
    Bytes enc_b = encode_msg(alt);
    for (uint64_t i = 0; i < config_.n(); i++) {
      if (i == my_) continue;
      send_to(i, MsgType::pre_prepare, i < config_.n() / 2 ? enc_a : enc_b);
    }
    trace("equivocate seq=" + std::to_string(seq) + " alt=" +
          hex8(alt.msg_hash()));
  } else {
    broadcast(MsgType::pre_prepare, encode_msg(msg));
  }

  try_attest(seq);
  try_order(seq);
}

// ---- slot progression ----

Coordinator::Slot& Coordinator::slot_at(uint64_t seq) { return slots_[seq]; }

void Coordinator::on_pre_prepare_frame(uint64_t from, const PrePrepareMsg& msg) {
  if (in_view_change_) return;
  if (msg.view != view_) return;
  if (from != primary_of(view_)) return;
  accept_pre_prepare(msg);
}

void Coordinator::accept_pre_prepare(const PrePrepareMsg& msg) {
  if (msg.view != view_) return;
  if (msg.seq <= last_stable_) return;
  if (msg.seq > last_ordered_ + 2 * config_.checkpoint_interval) return;
  uint64_t primary = primary_of(msg.view);
  if (primary == my_) return;

  Slot& slot = slot_at(msg.seq);
  if (slot.pre_prepare) {
    if (slot.h_pp == msg.msg_hash()) return;
    if (verify(config_.nodes[primary].public_key, msg.signing_digest(),
               msg.sig)) {
      record_equivocation(msg.seq, *slot.pre_prepare, msg);
    }
    return;
  }

  if (!verify(config_.nodes[primary].public_key, msg.signing_digest(),
              msg.sig)) {
    return;
  }
  if (hash_ops(msg.ops) != msg.h_ops) return;
  for (const OpEntry& op : msg.ops) {
    if (op.kind == OpKind::request_inf) {
      if (!op.request || !verify_request(*op.request)) return;
    } else {
      if (!op.group_op || op.group_op->kind != op.kind) return;
      if (!verify_group_op(*op.group_op)) return;
    }
  }
  auto mapped = map_results_to_ops(msg.ops, msg.results, primary);
  if (!mapped) return;
  if (build_result_tree(msg.view, msg.seq, msg.ops, *mapped).root() !=
      msg.r_root) {
    return;
  }

  slot.pre_prepare = msg;
  slot.h_pp = msg.msg_hash();

  if (msg.seq <= fold_seq_) {
    // A re-proposal of a slot this node already ordered: participate so
    // peers that have not ordered it can, but never re-apply.
    auto it = ordered_h_ops_.find(msg.seq);
    if (it == ordered_h_ops_.end() || it->second != msg.h_ops) {
      slot.pre_prepare.reset();
      slot.h_pp = Hash32{};
      return;
    }
    slot.fold_ok = true;
  }

  for (const OpEntry& op : msg.ops) {
    if (op.kind == OpKind::request_inf) ensure_request_known(*op.request);
  }
  register_result_set(msg.seq, primary, msg.r_root, std::move(*mapped));
  ensure_slot_execution(msg.seq);
  process_fold_chain();

  Slot& s = slot_at(msg.seq);
  std::vector<PrepareMsg> stashed = std::move(s.pending_prepares);
  s.pending_prepares.clear();
  for (const PrepareMsg& p : stashed) handle_prepare(p, true);

  auto fit = s.foreign_commits.find(s.h_pp);
  if (fit != s.foreign_commits.end()) {
    std::map<uint64_t, CommitMsg> waiting = std::move(fit->second);
    s.foreign_commits.erase(fit);
    for (auto& [node, c] : waiting) {
      if (!try_count_commit(msg.seq, c)) {
        slot_at(msg.seq).stalled_commits.push_back(c);
      }
    }
  }

  try_prepare(msg.seq);
  try_attest(msg.seq);
  try_order(msg.seq);
}

void Coordinator::process_fold_chain() {
  while (true) {
    auto it = slots_.find(fold_seq_ + 1);
    if (it == slots_.end()) return;
    Slot& slot = it->second;
    if (!slot.pre_prepare || slot.fold_ok) {
      if (!slot.fold_ok) return;
      fold_seq_++;
      continue;
    }
    if (!spec_state_.validate_batch(slot.pre_prepare->ops)) {
      trace("fold-reject seq=" + std::to_string(fold_seq_ + 1) + " hpp=" +
            hex8(slot.h_pp));
      slots_.erase(it);
      return;
    }
    slot.fold_ok = true;
    fold_seq_++;
    try_prepare(fold_seq_);
    try_attest(fold_seq_);
  }
}

void Coordinator::ensure_slot_execution(uint64_t seq) {
  Slot& slot = slot_at(seq);
  if (slot.exec_dispatched || !slot.pre_prepare) return;
  slot.exec_dispatched = true;

  const std::vector<OpEntry>& ops = slot.pre_prepare->ops;
  std::vector<const InferenceRequest*> reqs;
  std::vector<uint64_t> versions;
  std::set<std::string> flushed;
  for (const OpEntry& op : ops) {
    if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) continue;
    const InferenceRequest& req = *op.request;
    if (engine_.results().get(req.request_id, op.version)) continue;
    if (exec_inflight_.count({req.request_id, op.version})) continue;
    if (!engine_.is_resident(req.group_id, op.version)) continue;
    if (flushed.insert(req.group_id + "\x1f" + std::to_string(op.version))
            .second) {
      dispatch_batches(engine_.flush_version(req.group_id, op.version));
    }
    if (engine_.results().get(req.request_id, op.version)) continue;
    if (exec_inflight_.count({req.request_id, op.version})) continue;
    reqs.push_back(&*op.request);
    versions.push_back(op.version);
  }
  if (!reqs.empty()) {
    dispatch_batches(adjacency_batches(reqs, versions, config_.exec_batch_max));
  }
}

void Coordinator::try_prepare(uint64_t seq) {
  Slot& slot = slot_at(seq);
  if (!slot.pre_prepare || !slot.fold_ok || slot.prepare_sent ||
      in_view_change_) {
    return;
  }
  const std::vector<OpEntry>& ops = slot.pre_prepare->ops;
  std::map<uint64_t, InferenceResult> own;
  for (size_t k = 0; k < ops.size(); k++) {
    const OpEntry& op = ops[k];
    if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) continue;
    auto r = engine_.results().get(op.request->request_id, op.version);
    if (r) {
      own[k] = std::move(*r);
      continue;
    }
    if (exec_inflight_.count({op.request->request_id, op.version})) {
      return;  // execution will finish; prepare then
    }
  }

  PrepareMsg msg;
  msg.view = view_;
  msg.seq = seq;
  msg.pre_prepare_hash = slot.h_pp;
  msg.node = my_;
  msg.r_root = build_result_tree(slot.pre_prepare->view, seq, ops, own).root();
  msg.sig = make_sig(msg.signing_digest());
  for (auto& [k, r] : own) msg.results.push_back(r);

  slot.prepare_sent = true;
  slot.prepares[my_] = msg;
  register_result_set(seq, my_, msg.r_root, std::move(own));
  broadcast(MsgType::prepare, encode_msg(msg));
  trace("prepare seq=" + std::to_string(seq));
  try_attest(seq);
}

void Coordinator::on_prepare_frame(uint64_t from, const PrepareMsg& msg) {
  if (msg.node != from) return;
  handle_prepare(msg, false);
}

void Coordinator::handle_prepare(const PrepareMsg& msg, bool relayed) {
  if (in_view_change_) return;
  if (msg.view != view_) return;
  if (msg.node >= config_.n() || msg.node == my_) return;
  if (msg.node == primary_of(view_)) return;
  if (msg.seq <= last_stable_) return;
  if (msg.seq > last_ordered_ + 2 * config_.checkpoint_interval) return;

  Slot& slot = slot_at(msg.seq);
  if (!slot.pre_prepare) {
    slot.pending_prepares.push_back(msg);
    if (!relayed && slot.fetch_pp_from.insert(msg.node).second) {
      request_fetch_pp(msg.seq, msg.pre_prepare_hash, msg.node);
    }
    return;
  }
  if (msg.pre_prepare_hash != slot.h_pp) {
    // The sender prepared a different proposal at this slot: fetch it, both
    // as equivocation evidence and in case that side is the one ordering.
    if (!relayed) request_fetch_pp(msg.seq, msg.pre_prepare_hash, msg.node);
    return;
  }
  if (slot.prepares.count(msg.node)) return;
  if (!verify(config_.nodes[msg.node].public_key, msg.signing_digest(),
              msg.sig)) {
    return;
  }
  auto mapped = map_results_to_ops(slot.pre_prepare->ops, msg.results,
                                   msg.node);
  if (!mapped) return;
  if (build_result_tree(slot.pre_prepare->view, msg.seq, slot.pre_prepare->ops,
                        *mapped)
          .root() != msg.r_root) {
    return;
  }
  slot.prepares[msg.node] = msg;
  register_result_set(msg.seq, msg.node, msg.r_root, std::move(*mapped));
  try_attest(msg.seq);
  try_order(msg.seq);
}

std::optional<std::map<uint64_t, InferenceResult>>
Coordinator::map_results_to_ops(const std::vector<OpEntry>& ops,
                                const std::vector<InferenceResult>& results,
                                uint64_t provider) const {
  std::map<uint64_t, InferenceResult> out;
  for (const InferenceResult& r : results) {
    if (r.node_index != provider) return std::nullopt;
    bool placed = false;
    for (size_t k = 0; k < ops.size(); k++) {
      const OpEntry& op = ops[k];
      if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) {
        continue;
      }
      if (op.request->request_id != r.request_id) continue;
      if (op.request->group_id != r.group_id) continue;
      if (op.version != r.group_version) continue;
      if (out.count(k)) return std::nullopt;
      out[k] = r;
      placed = true;
      break;
    }
    if (!placed) return std::nullopt;
  }
  return out;
}

void Coordinator::register_result_set(
    uint64_t seq, uint64_t provider, const Hash32& r_root,
    std::map<uint64_t, InferenceResult> by_op) {
  Slot& slot = slot_at(seq);
  if (!slot.providers.insert(provider).second) return;
  slot.r_roots[provider] = r_root;
  for (auto& [k, r] : by_op) {
    slot.results_by_op[k][provider] = std::move(r);
  }
  if (!slot.stalled_commits.empty()) {
    std::vector<CommitMsg> stalled = std::move(slot.stalled_commits);
    slot.stalled_commits.clear();
    for (CommitMsg& c : stalled) {
      if (!try_count_commit(seq, c)) {
        slot_at(seq).stalled_commits.push_back(std::move(c));
      }
    }
  }
}

void Coordinator::ensure_request_known(const InferenceRequest& req) {
  if (requests_by_id_.count(req.request_id)) return;
  requests_by_id_[req.request_id] = req;
  arrival_[req.request_id] = arrival_counter_++;
  arm_op_timer(req.request_id);
}

// ---- attestation ----

void Coordinator::try_attest(uint64_t seq) {
  Slot& slot = slot_at(seq);
  if (!slot.pre_prepare || !slot.fold_ok || slot.commit_sent ||
      !slot.prepare_sent || in_view_change_) {
    return;
  }
  if (slot.providers.size() < quorum()) return;

  const std::vector<OpEntry>& ops = slot.pre_prepare->ops;
  slot.outcomes.clear();
  for (size_t k = 0; k < ops.size(); k++) {
    const OpEntry& op = ops[k];
    if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) continue;
    OpAttestOutcome outcome;
    const GroupVersions* gv = spec_state_.group(op.request->group_id);
    if (gv) {
      auto vit = gv->versions.find(op.version);
      if (vit != gv->versions.end()) {
        const ModelGroup& meta = vit->second;
        outcome.descriptor = meta.distance;
        outcome.epsilon = op.request->epsilon_override
                              ? *op.request->epsilon_override
                              : meta.distance.default_epsilon;
        std::map<uint64_t, std::vector<double>> outputs;
        auto oit = slot.results_by_op.find(k);
        if (oit != slot.results_by_op.end()) {
          for (const auto& [node, r] : oit->second) {
            if (r.output.size() ==
                meta.models.front().output_dim) {
              outputs[node] = r.output;
            }
          }
        }
        if (outputs.size() >= quorum()) {
          auto agreed = distance::select_quorum(outputs, config_.n(),
                                                config_.f,
                                                meta.distance.metric,
                                                outcome.epsilon);
          outcome.satisfied = agreed.satisfied;
          outcome.quorum = std::move(agreed.selected);
          outcome.diameter = agreed.diameter;
        }
      }
    }
    slot.outcomes[k] = std::move(outcome);
  }

  // Whole-batch attestation covers a provider when every certifiable
  // request in the batch counts that provider inside its agreed set.
  std::vector<AttestLeafRef> manifest;
  std::set<uint64_t> whole;
  for (uint64_t p : slot.providers) {
    bool all = true;
    for (const auto& [k, outcome] : slot.outcomes) {
      if (!outcome.satisfied || !outcome.quorum.count(p)) {
        all = false;
        break;
      }
    }
    if (all) whole.insert(p);
  }
  for (uint64_t p : whole) {
    AttestLeafRef ref;
    ref.kind = AttestLeafRef::Kind::whole_batch;
    ref.node = p;
    manifest.push_back(ref);
  }
  for (const auto& [k, outcome] : slot.outcomes) {
    if (!outcome.satisfied) continue;
    for (uint64_t p : outcome.quorum) {
      if (whole.count(p)) continue;
      AttestLeafRef ref;
      ref.kind = AttestLeafRef::Kind::single;
      ref.node = p;
      ref.op_index = k;
      manifest.push_back(ref);
    }
  }
  // Re-sort singles into (op, node) order after the per-op walk.
  std::stable_sort(manifest.begin(), manifest.end(),
                   [](const AttestLeafRef& a, const AttestLeafRef& b) {
                     if (a.kind != b.kind) {
                       return static_cast<uint8_t>(a.kind) <
                              static_cast<uint8_t>(b.kind);
                     }
                     if (a.kind == AttestLeafRef::Kind::whole_batch) {
                       return a.node < b.node;
                     }
                     if (a.op_index != b.op_index) {
                       return a.op_index < b.op_index;
                     }
                     return a.node < b.node;
                   });
  for (size_t k = 0; k < ops.size(); k++) {
    const OpEntry& op = ops[k];
    bool failed = op.status == OpStatus::rejected;
    if (op.kind == OpKind::request_inf && op.status == OpStatus::ok) {
      auto oit = slot.outcomes.find(k);
      failed = oit == slot.outcomes.end() || !oit->second.satisfied;
    }
    if (!failed) continue;
    AttestLeafRef ref;
    ref.kind = AttestLeafRef::Kind::failure;
    ref.op_index = k;
    manifest.push_back(ref);
  }

  std::vector<Bytes> leaves;
  leaves.reserve(manifest.size());
  for (const AttestLeafRef& ref : manifest) {
    auto leaf =
        attest_leaf_bytes(ref, ops, slot.r_roots, slot.results_by_op);
    if (!leaf) return;  // cannot happen with local data; stay silent if so
    leaves.push_back(std::move(*leaf));
  }
  if (leaves.empty()) return;

  CommitMsg msg;
  msg.view = view_;
  msg.seq = seq;
  msg.pre_prepare_hash = slot.h_pp;
  msg.node = my_;
  msg.a_root = merkle::Tree::build(leaves).root();
  msg.sig = make_sig(msg.signing_digest());
  msg.manifest = manifest;

  slot.own_manifest = std::move(manifest);
  slot.commits[my_] = msg;
  slot.commit_sent = true;
  broadcast(MsgType::commit, encode_msg(msg));

  uint64_t satisfied = 0;
  for (const auto& [k, outcome] : slot.outcomes) {
    if (outcome.satisfied) satisfied++;
  }
  trace("commit seq=" + std::to_string(seq) + " sat=" +
        std::to_string(satisfied) + "/" + std::to_string(slot.outcomes.size()));
  try_order(seq);
}

// ---- commits and ordering ----

void Coordinator::on_commit_frame(uint64_t from, const CommitMsg& msg) {
  if (in_view_change_) return;
  if (msg.view != view_) return;
  if (msg.node != from || msg.node >= config_.n() || msg.node == my_) return;
  if (msg.seq <= last_stable_) return;
  if (msg.seq > last_ordered_ + 2 * config_.checkpoint_interval) return;
  if (!verify(config_.nodes[msg.node].public_key, msg.signing_digest(),
              msg.sig)) {
    return;
  }

  Slot& slot = slot_at(msg.seq);
  if (!slot.pre_prepare || slot.h_pp != msg.pre_prepare_hash) {
    auto& bucket = slot.foreign_commits[msg.pre_prepare_hash];
    bucket.emplace(msg.node, msg);
    if (bucket.size() >= config_.f + 1) {
      maybe_adopt_foreign(msg.seq, msg.pre_prepare_hash);
    }
    return;
  }
  if (!try_count_commit(msg.seq, msg)) {
    slot.stalled_commits.push_back(msg);
    return;
  }
  try_order(msg.seq);
}

bool Coordinator::try_count_commit(uint64_t seq, const CommitMsg& msg) {
  Slot& slot = slot_at(seq);
  if (slot.commits.count(msg.node)) return true;
  if (!slot.pre_prepare) return false;

  std::vector<Bytes> leaves;
  leaves.reserve(msg.manifest.size());
  std::set<uint64_t> missing;
  for (const AttestLeafRef& ref : msg.manifest) {
    auto leaf = attest_leaf_bytes(ref, slot.pre_prepare->ops, slot.r_roots,
                                  slot.results_by_op);
    if (!leaf) {
      missing.insert(ref.node);
      continue;
    }
    leaves.push_back(std::move(*leaf));
  }
  if (!missing.empty()) {
    for (uint64_t provider : missing) {
      if (provider == primary_of(view_) || provider >= config_.n()) continue;
      if (!slot.fetched_providers.insert({provider, msg.node}).second) {
        continue;
      }
      request_fetch_prepare(seq, slot.h_pp, provider, msg.node);
    }
    return false;
  }
  if (leaves.empty()) return true;
  if (merkle::Tree::build(leaves).root() != msg.a_root) return true;

  slot.commits[msg.node] = msg;
  return true;
}

void Coordinator::try_order(uint64_t seq) {
  Slot& slot = slot_at(seq);
  if (slot.ordered || !slot.commit_sent || in_view_change_) return;
  if (slot.commits.size() < quorum()) return;
  if (seq != last_ordered_ + 1) return;
  apply_ordered(seq);
  try_order(seq + 1);
}

void Coordinator::apply_ordered(uint64_t seq) {
  Slot& slot = slot_at(seq);
  slot.ordered = true;
  last_ordered_ = seq;

  const PrePrepareMsg& pp = *slot.pre_prepare;
  for (const OpEntry& op : pp.ops) {
    if (op.kind == OpKind::request_inf) {
      const InferenceRequest& req = *op.request;
      committed_state_.apply_ordered_op(op);
      cancel_op_timer(req.request_id);
      std::erase(pending_ids_, req.request_id);
      continue;
    }
    const GroupOp& g = *op.group_op;
    std::optional<uint64_t> prior_active;
    if (const GroupVersions* gv = committed_state_.group(g.group_id)) {
      prior_active = gv->active;
    }
    committed_state_.apply_ordered_op(op);
    if (op.status == OpStatus::ok) {
      switch (op.kind) {
        case OpKind::define_group: {
          const GroupVersions* gv = committed_state_.group(g.group_id);
          if (gv) {
            auto vit = gv->versions.find(op.version);
            if (vit != gv->versions.end()) {
              if (auto err = engine_.load_group(vit->second)) {
                trace("load-fail group=" + g.group_id + " v=" +
                      std::to_string(op.version) + " err=" + *err);
              }
            }
          }
          break;
        }
        case OpKind::activate_group:
          engine_.set_status(g.group_id, op.version, GroupStatus::active);
          if (prior_active && *prior_active != op.version) {
            engine_.set_status(g.group_id, *prior_active,
                               GroupStatus::retired);
          }
          break;
        case OpKind::retire_group:
          engine_.retire_group(g.group_id);
          break;
        default:
          break;
      }
    }
    cancel_op_timer(g.op_id());
    std::erase(pending_ids_, g.op_id());
  }

  ordered_log_.push_back({seq, slot.h_pp});
  ordered_h_ops_[seq] = pp.h_ops;

  if (ordered_handler_) {
    OrderedSlot out;
    out.view = pp.view;
    out.seq = seq;
    out.h_pp = slot.h_pp;
    out.h_ops = pp.h_ops;
    out.primary = primary_of(pp.view);
    out.pre_prepare_sig = pp.sig;
    out.primary_r_root = pp.r_root;
    out.ops = pp.ops;
    out.r_roots = slot.r_roots;
    for (const auto& [node, prep] : slot.prepares) {
      out.prepare_sigs[node] = prep.sig;
    }
    out.commits = slot.commits;
    out.results_by_op = slot.results_by_op;
    out.outcomes = slot.outcomes;
    ordered_handler_(out);
  }

  for (const OpEntry& op : pp.ops) {
    if (op.kind == OpKind::request_inf) {
      engine_.results().prune(op.request->request_id);
    }
  }

  trace("ordered seq=" + std::to_string(seq) + " hpp=" + hex8(slot.h_pp) +
        " ops=" + std::to_string(pp.ops.size()));

  maybe_checkpoint();
  try_propose();
}

// ---- execution scheduling ----

void Coordinator::dispatch_batches(std::vector<ExecutionBatch> batches) {
  for (ExecutionBatch& batch : batches) {
    if (batch.requests.empty()) continue;
    for (const InferenceRequest& req : batch.requests) {
      exec_inflight_.insert({req.request_id, batch.group_version});
    }
    uint64_t now = env_.now_us();
    uint64_t start = std::max(now, exec_busy_until_);
    uint64_t done = start + engine_.cost().duration_us(batch.requests.size());
    exec_busy_until_ = done;
    env_.schedule(done - now, [this, b = std::move(batch)]() {
      engine_.execute_batch(b);
      for (const InferenceRequest& req : b.requests) {
        exec_inflight_.erase({req.request_id, b.group_version});
      }
      on_exec_complete();
    });
  }
}

void Coordinator::on_exec_complete() {
  if (pending_proposal_) {
    std::erase_if(pending_proposal_->waiting, [this](const auto& key) {
      return exec_inflight_.count(key) == 0;
    });
    if (pending_proposal_->waiting.empty()) finalize_proposal();
  }
  std::vector<uint64_t> ready;
  for (const auto& [seq, slot] : slots_) {
    if (slot.pre_prepare && slot.fold_ok && !slot.prepare_sent) {
      ready.push_back(seq);
    }
  }
  for (uint64_t seq : ready) {
    if (slots_.count(seq)) try_prepare(seq);
  }
  try_propose();
}

void Coordinator::arm_flush_timer() {
  auto deadline = engine_.next_flush_deadline();
  if (flush_timer_) {
    env_.cancel(*flush_timer_);
    flush_timer_.reset();
  }
  if (!deadline) return;
  uint64_t now = env_.now_us();
  uint64_t delay = *deadline > now ? *deadline - now : 0;
  flush_timer_ = env_.schedule(delay, [this]() {
    flush_timer_.reset();
    dispatch_batches(engine_.flush_due(env_.now_us()));
    arm_flush_timer();
  });
}

// ---- fetch protocol ----

void Coordinator::request_fetch_pp(uint64_t seq, const Hash32& j,
                                   uint64_t to) {
  FetchRequest msg;
  msg.view = view_;
  msg.seq = seq;
  msg.pre_prepare_hash = j;
  msg.requester = my_;
  msg.want_pre_prepare = true;
  send_to(to, MsgType::fetch, encode_msg(msg));
}

void Coordinator::request_fetch_prepare(uint64_t seq, const Hash32& j,
                                        uint64_t provider, uint64_t to) {
  FetchRequest msg;
  msg.view = view_;
  msg.seq = seq;
  msg.pre_prepare_hash = j;
  msg.requester = my_;
  msg.want_prepare_of = provider;
  send_to(to, MsgType::fetch, encode_msg(msg));
}

void Coordinator::on_fetch_frame(uint64_t from, const FetchRequest& msg) {
  (void)from;
  if (msg.requester >= config_.n() || msg.requester == my_) return;
  auto it = slots_.find(msg.seq);
  if (it == slots_.end()) return;
  Slot& slot = it->second;

  FetchResponse resp;
  resp.view = msg.view;
  resp.seq = msg.seq;
  resp.pre_prepare_hash = msg.pre_prepare_hash;
  bool useful = false;
  if (msg.want_pre_prepare) {
    if (slot.pre_prepare && slot.h_pp == msg.pre_prepare_hash) {
      resp.pre_prepare = slot.pre_prepare;
      useful = true;
    } else {
      auto eit = equivocation_.find(msg.seq);
      if (eit != equivocation_.end()) {
        for (const PrePrepareMsg& pp : eit->second) {
          if (pp.msg_hash() == msg.pre_prepare_hash) {
            resp.pre_prepare = pp;
            useful = true;
            break;
          }
        }
      }
    }
  }
  if (msg.want_prepare_of) {
    auto pit = slot.prepares.find(*msg.want_prepare_of);
    if (pit != slot.prepares.end() &&
        pit->second.pre_prepare_hash == msg.pre_prepare_hash) {
      resp.prepare = pit->second;
      useful = true;
    }
  }
  if (!useful) return;
  send_to(msg.requester, MsgType::fetch_response, encode_msg(resp));
}

void Coordinator::on_fetch_response_frame(uint64_t from,
                                          const FetchResponse& msg) {
  (void)from;
  if (in_view_change_) return;
  if (msg.pre_prepare) {
    const PrePrepareMsg& pp = *msg.pre_prepare;
    if (pp.view == view_) {
      Slot& slot = slot_at(pp.seq);
      if (slot.pre_prepare && slot.h_pp != pp.msg_hash()) {
        uint64_t primary = primary_of(view_);
        if (verify(config_.nodes[primary].public_key, pp.signing_digest(),
                   pp.sig)) {
          record_equivocation(pp.seq, *slot.pre_prepare, pp);
        }
      } else {
        accept_pre_prepare(pp);
      }
    }
  }
  if (msg.prepare) {
    handle_prepare(*msg.prepare, true);
    try_attest(msg.prepare->seq);
    try_order(msg.prepare->seq);
  }
}

void Coordinator::record_equivocation(uint64_t seq, const PrePrepareMsg& a,
                                      const PrePrepareMsg& b) {
  auto& bucket = equivocation_[seq];
  auto holds = [&bucket](const Hash32& h) {
    for (const PrePrepareMsg& pp : bucket) {
      if (pp.msg_hash() == h) return true;
    }
    return false;
  };
  bool fresh = false;
  if (!holds(a.msg_hash())) {
    bucket.push_back(a);
    fresh = true;
  }
  if (!holds(b.msg_hash())) {
    bucket.push_back(b);
    fresh = true;
  }
  if (fresh) {
    trace("equivocation seq=" + std::to_string(seq) + " a=" +
          hex8(a.msg_hash()) + " b=" + hex8(b.msg_hash()));
  }
}

void Coordinator::maybe_adopt_foreign(uint64_t seq, const Hash32& j) {
  Slot& slot = slot_at(seq);
  if (slot.ordered) return;
  auto bucket = slot.foreign_commits.find(j);
  if (bucket == slot.foreign_commits.end()) return;
  if (bucket->second.size() < config_.f + 1) return;

  // f + 1 commits on one proposal hash include an honest node, so that
  // proposal is the one this slot can order. Drop ours and fetch theirs.
  trace("adopt seq=" + std::to_string(seq) + " j=" + hex8(j));
  std::vector<uint64_t> holders;
  for (const auto& [node, c] : bucket->second) holders.push_back(node);

  if (slot.pre_prepare) {
    slot.pre_prepare.reset();
    slot.h_pp = Hash32{};
    slot.fold_ok = false;
    slot.exec_dispatched = false;
    slot.prepare_sent = false;
    slot.commit_sent = false;
    slot.prepares.clear();
    slot.r_roots.clear();
    slot.providers.clear();
    slot.fetched_providers.clear();
    slot.results_by_op.clear();
    slot.commits.clear();
    slot.stalled_commits.clear();
    slot.outcomes.clear();
    slot.own_manifest.clear();
    rewind_fold();
  }
  for (uint64_t holder : holders) {
    request_fetch_pp(seq, j, holder);
  }
}

void Coordinator::rewind_fold() {
  spec_state_ = committed_state_;
  fold_seq_ = last_ordered_;
  for (auto& [seq, slot] : slots_) {
    if (seq > last_ordered_) slot.fold_ok = false;
  }
  process_fold_chain();
}

// ---- checkpoints ----

void Coordinator::maybe_checkpoint() {
  if (last_ordered_ == 0) return;
  if (last_ordered_ % config_.checkpoint_interval != 0) return;
  if (last_ordered_ <= last_stable_) return;

  CheckpointMsg msg;
  msg.seq = last_ordered_;
  msg.state_digest = committed_state_.digest();
  msg.node = my_;
  msg.sig = make_sig(msg.signing_digest());
  checkpoints_[msg.seq][my_] = msg;
  broadcast(MsgType::checkpoint, encode_msg(msg));
  trace("checkpoint seq=" + std::to_string(msg.seq) + " digest=" +
        hex8(msg.state_digest));
  on_checkpoint_frame(my_, msg);
}

void Coordinator::on_checkpoint_frame(uint64_t from, const CheckpointMsg& msg) {
  if (msg.node != from || msg.node >= config_.n()) return;
  if (msg.seq <= last_stable_) return;
  if (msg.node != my_) {
    if (!verify(config_.nodes[msg.node].public_key, msg.signing_digest(),
                msg.sig)) {
      return;
    }
    checkpoints_[msg.seq].emplace(msg.node, msg);
  }

  auto& at_seq = checkpoints_[msg.seq];
  std::map<Hash32, std::vector<CheckpointMsg>> by_digest;
  for (const auto& [node, c] : at_seq) {
    by_digest[c.state_digest].push_back(c);
  }
  for (auto& [digest, proof] : by_digest) {
    if (proof.size() < quorum()) continue;
    last_stable_ = msg.seq;
    stable_digest_ = digest;
    stable_proof_ = proof;
    prune_below(msg.seq);
    trace("stable seq=" + std::to_string(msg.seq) + " digest=" +
          hex8(digest));
    return;
  }
}

void Coordinator::prune_below(uint64_t stable_seq) {
  uint64_t keep_from = stable_seq > config_.checkpoint_interval
                           ? stable_seq - config_.checkpoint_interval
                           : 0;
  std::erase_if(slots_,
                [keep_from](const auto& kv) { return kv.first <= keep_from; });
  std::erase_if(checkpoints_, [stable_seq](const auto& kv) {
    return kv.first < stable_seq;
  });
  std::erase_if(ordered_h_ops_, [stable_seq](const auto& kv) {
    return kv.first < stable_seq;
  });
  std::erase_if(equivocation_, [stable_seq](const auto& kv) {
    return kv.first <= stable_seq;
  });
}

// ---- liveness ----

void Coordinator::arm_op_timer(const Hash32& id) {
  if (request_timers_.count(id)) return;
  request_timers_[id] = env_.schedule(
      config_.view_timeout_us, [this, id]() { on_op_timeout(id); });
}

void Coordinator::cancel_op_timer(const Hash32& id) {
  auto it = request_timers_.find(id);
  if (it == request_timers_.end()) return;
  env_.cancel(it->second);
  request_timers_.erase(it);
}

void Coordinator::on_op_timeout(const Hash32& id) {
  request_timers_.erase(id);
  request_timers_[id] = env_.schedule(
      config_.view_timeout_us, [this, id]() { on_op_timeout(id); });
  if (!in_view_change_) {
    start_view_change(view_ + 1);
  }
}

void Coordinator::start_view_change(uint64_t target) {
  if (target <= view_) return;
  if (in_view_change_ && vc_target_ >= target) return;
  in_view_change_ = true;
  vc_target_ = target;
  view_changes_started_++;
  pending_proposal_.reset();

  ViewChangeMsg msg = build_view_change(target);
  view_changes_[target].emplace(my_, msg);
  broadcast(MsgType::view_change, encode_msg(msg));
  trace("viewchange target=" + std::to_string(target));

  if (vc_timer_) env_.cancel(*vc_timer_);
  uint64_t patience = config_.view_timeout_us * (1 + (target - view_));
  vc_timer_ = env_.schedule(patience, [this, target]() {
    vc_timer_.reset();
    if (in_view_change_ && vc_target_ == target) {
      start_view_change(target + 1);
    }
  });

  if (view_changes_[target].size() >= quorum()) {
    on_quorum_view_changes(target);
  }
}

ViewChangeMsg Coordinator::build_view_change(uint64_t target) const {
  ViewChangeMsg msg;
  msg.new_view = target;
  msg.node = my_;
  msg.last_stable_seq = last_stable_;
  msg.checkpoint_digest = stable_digest_;
  msg.checkpoint_proof = stable_proof_;
  for (const auto& [seq, slot] : slots_) {
    if (seq <= last_stable_ || !slot.pre_prepare) continue;
    std::vector<PrepareMsg> prepares;
    for (const auto& [node, prep] : slot.prepares) {
      PrepareMsg lean = prep;
      lean.results.clear();
      prepares.push_back(std::move(lean));
    }
    if (prepares.size() < quorum() - 1) continue;
    PreparedProof proof;
    proof.pre_prepare = *slot.pre_prepare;
    proof.pre_prepare.results.clear();
    proof.prepares = std::move(prepares);
    msg.prepared.push_back(std::move(proof));
  }
  for (const auto& [seq, pps] : equivocation_) {
    for (const PrePrepareMsg& pp : pps) {
      PrePrepareMsg lean = pp;
      lean.results.clear();
      lean.ops.clear();
      msg.equivocation_proof.push_back(std::move(lean));
    }
  }
  msg.sig = make_sig(msg.signing_digest());
  return msg;
}

bool Coordinator::validate_prepared_proof(const PreparedProof& proof) const {
  const PrePrepareMsg& pp = proof.pre_prepare;
  uint64_t primary = primary_of(pp.view);
  if (!verify(config_.nodes[primary].public_key, pp.signing_digest(),
              pp.sig)) {
    return false;
  }
  if (hash_ops(pp.ops) != pp.h_ops) return false;
  for (const OpEntry& op : pp.ops) {
    if (op.kind == OpKind::request_inf) {
      if (!op.request || !verify_request(*op.request)) return false;
    } else {
      if (!op.group_op || op.group_op->kind != op.kind) return false;
      if (!verify_group_op(*op.group_op)) return false;
    }
  }
  Hash32 j = pre_prepare_hash_of(pp.view, pp.seq, pp.h_ops, pp.r_root, pp.sig);
  std::set<uint64_t> nodes;
  for (const PrepareMsg& prep : proof.prepares) {
    if (prep.view != pp.view || prep.seq != pp.seq) continue;
    if (prep.pre_prepare_hash != j) continue;
    if (prep.node >= config_.n() || prep.node == primary) continue;
    if (!verify(config_.nodes[prep.node].public_key, prep.signing_digest(),
                prep.sig)) {
      continue;
    }
    nodes.insert(prep.node);
  }
  return nodes.size() >= quorum() - 1;
}

bool Coordinator::validate_view_change(const ViewChangeMsg& msg) const {
  if (msg.node >= config_.n()) return false;
  if (!verify(config_.nodes[msg.node].public_key, msg.signing_digest(),
              msg.sig)) {
    return false;
  }
  if (msg.last_stable_seq > 0) {
    std::set<uint64_t> signers;
    for (const CheckpointMsg& c : msg.checkpoint_proof) {
      if (c.seq != msg.last_stable_seq) continue;
      if (c.state_digest != msg.checkpoint_digest) continue;
      if (c.node >= config_.n()) continue;
      if (!verify(config_.nodes[c.node].public_key, c.signing_digest(),
                  c.sig)) {
        continue;
      }
      signers.insert(c.node);
    }
    if (signers.size() < quorum()) return false;
  }
  for (const PreparedProof& proof : msg.prepared) {
    if (proof.pre_prepare.seq <= msg.last_stable_seq) return false;
    if (!validate_prepared_proof(proof)) return false;
  }
  return true;
}

void Coordinator::on_view_change_frame(uint64_t from, const ViewChangeMsg& msg) {
  if (msg.node != from) return;
  if (msg.new_view <= view_) return;
  if (!validate_view_change(msg)) return;
  view_changes_[msg.new_view].emplace(msg.node, msg);

  if (!in_view_change_) {
    std::set<uint64_t> movers;
    uint64_t smallest = 0;
    for (const auto& [target, vcs] : view_changes_) {
      if (target <= view_) continue;
      if (smallest == 0) smallest = target;
      for (const auto& [node, vc] : vcs) movers.insert(node);
    }
    if (movers.size() >= config_.f + 1 && smallest > 0) {
      start_view_change(smallest);
    }
  }
  auto it = view_changes_.find(msg.new_view);
  if (it != view_changes_.end() && it->second.size() >= quorum()) {
    on_quorum_view_changes(msg.new_view);
  }
}

void Coordinator::on_quorum_view_changes(uint64_t target) {
  if (primary_of(target) != my_) return;
  if (target <= view_) return;
  auto it = view_changes_.find(target);
  if (it == view_changes_.end() || it->second.size() < quorum()) return;

  std::vector<ViewChangeMsg> vcs;
  uint64_t base = 0;
  for (const auto& [node, vc] : it->second) {
    vcs.push_back(vc);
    base = std::max(base, vc.last_stable_seq);
  }

  // One prepared proof per slot above the stable base; the highest-view
  // proposal wins when a slot prepared in more than one view.
  std::map<uint64_t, const PreparedProof*> best;
  for (const ViewChangeMsg& vc : vcs) {
    for (const PreparedProof& proof : vc.prepared) {
      uint64_t seq = proof.pre_prepare.seq;
      if (seq <= base) continue;
      auto bit = best.find(seq);
      if (bit == best.end() ||
          proof.pre_prepare.view > bit->second->pre_prepare.view) {
        best[seq] = &proof;
      }
    }
  }
  uint64_t hi = base;
  for (const auto& [seq, proof] : best) hi = std::max(hi, seq);

  std::vector<PrePrepareMsg> re;
  for (uint64_t seq = base + 1; seq <= hi; seq++) {
    PrePrepareMsg pp;
    pp.view = target;
    pp.seq = seq;
    auto bit = best.find(seq);
    if (bit != best.end()) pp.ops = bit->second->pre_prepare.ops;
    std::map<uint64_t, InferenceResult> own;
    for (size_t k = 0; k < pp.ops.size(); k++) {
      const OpEntry& op = pp.ops[k];
      if (op.kind != OpKind::request_inf || op.status != OpStatus::ok) {
        continue;
      }
      if (auto r = engine_.ensure_result(*op.request, op.version)) {
        own[k] = std::move(*r);
      }
    }
    pp.h_ops = hash_ops(pp.ops);
    pp.r_root = build_result_tree(target, seq, pp.ops, own).root();
    pp.sig = make_sig(
        pre_prepare_signing_digest(pp.view, pp.seq, pp.h_ops, pp.r_root));
    for (auto& [k, r] : own) pp.results.push_back(r);
    re.push_back(std::move(pp));
  }

  NewViewMsg msg;
  msg.new_view = target;
  msg.node = my_;
  msg.view_changes = std::move(vcs);
  msg.re_proposals = re;
  msg.sig = make_sig(msg.signing_digest());
  broadcast(MsgType::new_view, encode_msg(msg));
  trace("newview target=" + std::to_string(target) + " re=" +
        std::to_string(re.size()));
  install_view(target, re);
}

void Coordinator::on_new_view_frame(uint64_t from, const NewViewMsg& msg) {
  if (msg.new_view <= view_) return;
  if (msg.node != from || msg.node != primary_of(msg.new_view)) return;
  if (!verify(config_.nodes[msg.node].public_key, msg.signing_digest(),
              msg.sig)) {
    return;
  }

  std::set<uint64_t> senders;
  uint64_t base = 0;
  for (const ViewChangeMsg& vc : msg.view_changes) {
    if (vc.new_view != msg.new_view) return;
    if (!validate_view_change(vc)) return;
    senders.insert(vc.node);
    base = std::max(base, vc.last_stable_seq);
  }
  if (senders.size() < quorum()) return;

  std::map<uint64_t, const PreparedProof*> best;
  for (const ViewChangeMsg& vc : msg.view_changes) {
    for (const PreparedProof& proof : vc.prepared) {
      uint64_t seq = proof.pre_prepare.seq;
      if (seq <= base) continue;
      auto bit = best.find(seq);
      if (bit == best.end() ||
          proof.pre_prepare.view > bit->second->pre_prepare.view) {
        best[seq] = &proof;
      }
    }
  }
  uint64_t hi = base;
  for (const auto& [seq, proof] : best) hi = std::max(hi, seq);

  // Every prepared slot must come back with its exact batch; gaps must be
  // filled with empty batches. A new view that drops prepared work is a
  // lying primary, and the answer is the next view.
  bool valid = msg.re_proposals.size() == hi - base;
  if (valid) {
    for (size_t i = 0; i < msg.re_proposals.size(); i++) {
      const PrePrepareMsg& pp = msg.re_proposals[i];
      uint64_t seq = base + 1 + i;
      if (pp.view != msg.new_view || pp.seq != seq) {
        valid = false;
        break;
      }
      Hash32 expected;
      auto bit = best.find(seq);
      if (bit != best.end()) {
        expected = bit->second->pre_prepare.h_ops;
      } else {
        expected = hash_ops(std::vector<OpEntry>{});
      }
      if (pp.h_ops != expected || hash_ops(pp.ops) != pp.h_ops) {
        valid = false;
        break;
      }
      if (!verify(config_.nodes[msg.node].public_key, pp.signing_digest(),
                  pp.sig)) {
        valid = false;
        break;
      }
    }
  }
  if (!valid) {
    start_view_change(msg.new_view + 1);
    return;
  }
  install_view(msg.new_view, msg.re_proposals);
}

void Coordinator::install_view(uint64_t target,
                               const std::vector<PrePrepareMsg>& re) {
  if (vc_timer_) {
    env_.cancel(*vc_timer_);
    vc_timer_.reset();
  }
  in_view_change_ = false;
  vc_target_ = 0;
  view_ = target;
  pending_proposal_.reset();
  slots_.clear();
  equivocation_.clear();
  std::erase_if(view_changes_,
                [target](const auto& kv) { return kv.first <= target; });

  spec_state_ = committed_state_;
  fold_seq_ = last_ordered_;
  uint64_t hi = last_ordered_;
  for (const PrePrepareMsg& pp : re) hi = std::max(hi, pp.seq);
  next_seq_ = hi + 1;

  std::set<Hash32> covered;
  for (const PrePrepareMsg& pp : re) {
    for (const OpEntry& op : pp.ops) {
      covered.insert(op.kind == OpKind::request_inf
                         ? op.request->request_id
                         : op.group_op->op_id());
    }
  }
  std::vector<std::pair<uint64_t, Hash32>> backlog;
  for (const auto& [id, timer] : request_timers_) {
    if (covered.count(id)) continue;
    backlog.push_back({arrival_.at(id), id});
  }
  std::sort(backlog.begin(), backlog.end());
  pending_ids_.clear();
  for (const auto& [rank, id] : backlog) pending_ids_.push_back(id);

  trace("install view=" + std::to_string(target) + " re=" +
        std::to_string(re.size()));

  if (primary_of(target) == my_) {
    for (const PrePrepareMsg& pp : re) {
      // The new primary's own re-proposals enter its slots directly.
      Slot& slot = slot_at(pp.seq);
      slot.pre_prepare = pp;
      slot.h_pp = pp.msg_hash();
      slot.prepare_sent = true;
      slot.exec_dispatched = true;
      auto mapped = map_results_to_ops(pp.ops, pp.results, my_);
      if (pp.seq <= fold_seq_) {
        auto oit = ordered_h_ops_.find(pp.seq);
        slot.fold_ok = oit != ordered_h_ops_.end() && oit->second == pp.h_ops;
      } else if (spec_state_.validate_batch(pp.ops)) {
        slot.fold_ok = true;
        fold_seq_ = pp.seq;
      }
      if (mapped) {
        register_result_set(pp.seq, my_, pp.r_root, std::move(*mapped));
      }
      try_attest(pp.seq);
    }
  } else {
    for (const PrePrepareMsg& pp : re) {
      accept_pre_prepare(pp);
    }
  }
  try_propose();
}

}  // namespace credo
