// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/messages.hpp"

namespace credo {

namespace {

// Leaf domain bytes. Every tree leaf starts with one of these so leaves of
// different meanings can never collide byte-for-byte.
constexpr uint8_t kLeafResult = 0x52;
constexpr uint8_t kLeafMissing = 0x4D;
constexpr uint8_t kLeafGroupOp = 0x47;
constexpr uint8_t kLeafNoop = 0x4E;
constexpr uint8_t kLeafWholeBatch = 0x57;
constexpr uint8_t kLeafSingle = 0x53;
constexpr uint8_t kLeafFailure = 0x46;

void put_pub(Encoder& e, const PublicKey& k) {
  e.fixed(ByteView(k.data(), k.size()));
}

PublicKey get_pub(Decoder& d) {
  PublicKey k{};
  d.fixed(std::span<uint8_t>(k.data(), k.size()));
  return k;
}

void put_sig(Encoder& e, const Signature& s) {
  e.fixed(ByteView(s.data(), s.size()));
}

Signature get_sig(Decoder& d) {
  Signature s{};
  d.fixed(std::span<uint8_t>(s.data(), s.size()));
  return s;
}

OpKind decode_op_kind(Decoder& d) {
  uint8_t k = d.u8();
  if (k > static_cast<uint8_t>(OpKind::retire_group)) {
    throw CodecError("unknown op kind");
  }
  return static_cast<OpKind>(k);
}

void encode_results(Encoder& e, const std::vector<InferenceResult>& rs) {
  e.list(rs, [](Encoder& enc, const InferenceResult& r) { r.encode(enc); });
}

std::vector<InferenceResult> decode_results(Decoder& d) {
  return d.list<InferenceResult>(
      [](Decoder& dec) { return InferenceResult::decode(dec); });
}

}  // namespace

void GroupDefinition::encode(Encoder& e) const {
  e.list(models, [](Encoder& enc, const ModelDescriptor& m) { m.encode(enc); });
  distance.encode(e);
}

GroupDefinition GroupDefinition::decode(Decoder& d) {
  GroupDefinition out;
  out.models = d.list<ModelDescriptor>(
      [](Decoder& dec) { return ModelDescriptor::decode(dec); });
  out.distance = distance::DistanceDescriptor::decode(d);
  return out;
}

namespace {

void encode_group_op_body(Encoder& e, const GroupOp& op) {
  e.u8(static_cast<uint8_t>(op.kind));
  e.str(op.group_id);
  e.optional(op.definition,
             [](Encoder& enc, const GroupDefinition& g) { g.encode(enc); });
  put_pub(e, op.owner_pub);
  e.bytes(op.owner_nonce);
}

}  // namespace

void GroupOp::encode(Encoder& e) const {
  encode_group_op_body(e, *this);
  put_sig(e, owner_sig);
}

GroupOp GroupOp::decode(Decoder& d) {
  GroupOp out;
  out.kind = decode_op_kind(d);
  if (out.kind == OpKind::request_inf) {
    throw CodecError("group op cannot carry request kind");
  }
  out.group_id = d.str();
  out.definition = d.optional<GroupDefinition>(
      [](Decoder& dec) { return GroupDefinition::decode(dec); });
  out.owner_pub = get_pub(d);
  out.owner_nonce = d.bytes();
  out.owner_sig = get_sig(d);
  return out;
}

Hash32 GroupOp::signing_digest() const {
  Encoder e;
  e.u8(kGroupOpSigTag);
  encode_group_op_body(e, *this);
  return hash(e.data());
}

Hash32 GroupOp::op_id() const {
  return canonical_request_id(ByteView(owner_pub.data(), owner_pub.size()),
                              ByteView(owner_nonce.data(), owner_nonce.size()));
}

GroupOp make_signed_group_op(const KeyPair& owner, Bytes nonce, OpKind kind,
                             std::string group_id,
                             std::optional<GroupDefinition> definition) {
  if (kind == OpKind::request_inf) {
    throw std::invalid_argument("make_signed_group_op: not a group op kind");
  }
  if (nonce.empty()) {
    throw std::invalid_argument("make_signed_group_op: empty nonce");
  }
  GroupOp op;
  op.kind = kind;
  op.group_id = std::move(group_id);
  op.definition = std::move(definition);
  op.owner_pub = owner.public_key();
  op.owner_nonce = std::move(nonce);
  op.owner_sig = owner.sign(op.signing_digest());
  return op;
}

bool verify_group_op(const GroupOp& op) {
  if (op.kind == OpKind::request_inf) return false;
  if (op.group_id.empty()) return false;
  if (op.owner_nonce.empty()) return false;
  if ((op.kind == OpKind::define_group) != op.definition.has_value()) {
    return false;
  }
  if (op.definition) {
    if (op.definition->models.empty()) return false;
    for (const auto& m : op.definition->models) {
      if (m.input_dim < 1 || m.output_dim < 1) return false;
      if (m.input_dim != op.definition->models.front().input_dim ||
          m.output_dim != op.definition->models.front().output_dim) {
        return false;
      }
    }
    if (!(op.definition->distance.default_epsilon >= 0.0)) return false;
    if (op.definition->distance.metric == distance::Metric::max_minus_min &&
        op.definition->models.front().output_dim != 1) {
      return false;
    }
  }
  return verify(op.owner_pub, op.signing_digest(), op.owner_sig);
}

void OpEntry::encode(Encoder& e) const {
  e.u8(static_cast<uint8_t>(kind));
  e.optional(request,
             [](Encoder& enc, const InferenceRequest& r) { r.encode(enc); });
  e.optional(group_op, [](Encoder& enc, const GroupOp& g) { g.encode(enc); });
  e.u64(version);
  e.u8(static_cast<uint8_t>(status));
  e.str(reason);
}

OpEntry OpEntry::decode(Decoder& d) {
  OpEntry out;
  out.kind = decode_op_kind(d);
  out.request = d.optional<InferenceRequest>(
      [](Decoder& dec) { return InferenceRequest::decode(dec); });
  out.group_op =
      d.optional<GroupOp>([](Decoder& dec) { return GroupOp::decode(dec); });
  out.version = d.u64();
  uint8_t s = d.u8();
  if (s > static_cast<uint8_t>(OpStatus::rejected)) {
    throw CodecError("unknown op status");
  }
  out.status = static_cast<OpStatus>(s);
  out.reason = d.str();
  if ((out.kind == OpKind::request_inf) != out.request.has_value()) {
    throw CodecError("op kind does not match request payload");
  }
  if ((out.kind != OpKind::request_inf) != out.group_op.has_value()) {
    throw CodecError("op kind does not match group payload");
  }
  if (out.group_op && out.group_op->kind != out.kind) {
    throw CodecError("op kind disagrees with embedded group op");
  }
  return out;
}

Hash32 hash_ops(const std::vector<OpEntry>& ops) {
  Encoder e;
  e.u8(kOpsHashTag);
  e.list(ops, [](Encoder& enc, const OpEntry& op) { op.encode(enc); });
  return hash(e.data());
}

Bytes result_leaf(const InferenceRequest& request,
                  const InferenceResult& result) {
  Encoder e;
  e.u8(kLeafResult);
  request.encode(e);
  result.encode(e);
  return e.take();
}

Bytes missing_result_leaf(const InferenceRequest& request) {
  Encoder e;
  e.u8(kLeafMissing);
  request.encode(e);
  return e.take();
}

Bytes group_op_leaf(const OpEntry& entry) {
  Encoder e;
  e.u8(kLeafGroupOp);
  entry.encode(e);
  return e.take();
}

Bytes noop_leaf(uint64_t view, uint64_t seq) {
  Encoder e;
  e.u8(kLeafNoop);
  e.u64(view);
  e.u64(seq);
  return e.take();
}

merkle::Tree build_result_tree(
    uint64_t view, uint64_t seq, const std::vector<OpEntry>& ops,
    const std::map<uint64_t, InferenceResult>& results_by_op) {
  std::vector<Bytes> leaves;
  if (ops.empty()) {
    leaves.push_back(noop_leaf(view, seq));
    return merkle::Tree::build(leaves);
  }
  leaves.reserve(ops.size());
  for (size_t k = 0; k < ops.size(); k++) {
    const OpEntry& op = ops[k];
    if (op.kind == OpKind::request_inf) {
      auto it = results_by_op.find(k);
      if (it != results_by_op.end()) {
        leaves.push_back(result_leaf(*op.request, it->second));
      } else {
        leaves.push_back(missing_result_leaf(*op.request));
      }
    } else {
      leaves.push_back(group_op_leaf(op));
    }
  }
  return merkle::Tree::build(leaves);
}

void FailureRecord::encode(Encoder& e) const {
  e.hash(request_id);
  e.str(group_id);
  e.u64(version);
  e.str(reason);
}

FailureRecord FailureRecord::decode(Decoder& d) {
  FailureRecord out;
  out.request_id = d.hash();
  out.group_id = d.str();
  out.version = d.u64();
  out.reason = d.str();
  return out;
}

Bytes whole_batch_leaf(const Hash32& r_root) {
  Encoder e;
  e.u8(kLeafWholeBatch);
  e.hash(r_root);
  return e.take();
}

Bytes single_attest_leaf(const InferenceRequest& request,
                         const InferenceResult& result) {
  Encoder e;
  e.u8(kLeafSingle);
  request.encode(e);
  result.encode(e);
  return e.take();
}

Bytes failure_leaf(const FailureRecord& record) {
  Encoder e;
  e.u8(kLeafFailure);
  record.encode(e);
  return e.take();
}

FailureRecord failure_record_for(const OpEntry& op) {
  FailureRecord rec;
  if (op.kind == OpKind::request_inf) {
    rec.request_id = op.request->request_id;
    rec.group_id = op.request->group_id;
  } else {
    rec.request_id = op.group_op->op_id();
    rec.group_id = op.group_op->group_id;
  }
  rec.version = op.version;
  rec.reason =
      op.status == OpStatus::rejected ? op.reason : "quorum unsatisfied";
  return rec;
}

std::optional<Bytes> attest_leaf_bytes(
    const AttestLeafRef& ref, const std::vector<OpEntry>& ops,
    const std::map<uint64_t, Hash32>& r_roots,
    const std::map<uint64_t, std::map<uint64_t, InferenceResult>>&
        results_by_op) {
  switch (ref.kind) {
    case AttestLeafRef::Kind::whole_batch: {
      auto it = r_roots.find(ref.node);
      if (it == r_roots.end()) return std::nullopt;
      return whole_batch_leaf(it->second);
    }
    case AttestLeafRef::Kind::single: {
      if (ref.op_index >= ops.size()) return std::nullopt;
      const OpEntry& op = ops[ref.op_index];
      if (op.kind != OpKind::request_inf) return std::nullopt;
      auto oit = results_by_op.find(ref.op_index);
      if (oit == results_by_op.end()) return std::nullopt;
      auto rit = oit->second.find(ref.node);
      if (rit == oit->second.end()) return std::nullopt;
      return single_attest_leaf(*op.request, rit->second);
    }
    case AttestLeafRef::Kind::failure: {
      if (ref.op_index >= ops.size()) return std::nullopt;
      return failure_leaf(failure_record_for(ops[ref.op_index]));
    }
  }
  return std::nullopt;
}

void AttestLeafRef::encode(Encoder& e) const {
  e.u8(static_cast<uint8_t>(kind));
  e.u64(node);
  e.u64(op_index);
}

AttestLeafRef AttestLeafRef::decode(Decoder& d) {
  AttestLeafRef out;
  uint8_t k = d.u8();
  if (k > static_cast<uint8_t>(Kind::failure)) {
    throw CodecError("unknown attest leaf kind");
  }
  out.kind = static_cast<Kind>(k);
  out.node = d.u64();
  out.op_index = d.u64();
  return out;
}

namespace {

void encode_pre_prepare_signed(Encoder& e, const PrePrepareMsg& m) {
  e.u64(m.view);
  e.u64(m.seq);
  e.hash(m.h_ops);
  e.hash(m.r_root);
}

}  // namespace

void PrePrepareMsg::encode(Encoder& e) const {
  encode_pre_prepare_signed(e, *this);
  put_sig(e, sig);
  e.list(ops, [](Encoder& enc, const OpEntry& op) { op.encode(enc); });
  encode_results(e, results);
}

PrePrepareMsg PrePrepareMsg::decode(Decoder& d) {
  PrePrepareMsg out;
  out.view = d.u64();
  out.seq = d.u64();
  out.h_ops = d.hash();
  out.r_root = d.hash();
  out.sig = get_sig(d);
  out.ops = d.list<OpEntry>([](Decoder& dec) { return OpEntry::decode(dec); });
  out.results = decode_results(d);
  return out;
}

Hash32 PrePrepareMsg::signing_digest() const {
  return pre_prepare_signing_digest(view, seq, h_ops, r_root);
}

Hash32 PrePrepareMsg::msg_hash() const {
  return pre_prepare_hash_of(view, seq, h_ops, r_root, sig);
}

void PrepareMsg::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(pre_prepare_hash);
  e.u64(node);
  e.hash(r_root);
  put_sig(e, sig);
  encode_results(e, results);
}

PrepareMsg PrepareMsg::decode(Decoder& d) {
  PrepareMsg out;
  out.view = d.u64();
  out.seq = d.u64();
  out.pre_prepare_hash = d.hash();
  out.node = d.u64();
  out.r_root = d.hash();
  out.sig = get_sig(d);
  out.results = decode_results(d);
  return out;
}

Hash32 PrepareMsg::signing_digest() const {
  return prepare_signing_digest(view, seq, pre_prepare_hash, node, r_root);
}

void CommitMsg::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(pre_prepare_hash);
  e.u64(node);
  e.hash(a_root);
  put_sig(e, sig);
  e.list(manifest,
         [](Encoder& enc, const AttestLeafRef& r) { r.encode(enc); });
}

CommitMsg CommitMsg::decode(Decoder& d) {
  CommitMsg out;
  out.view = d.u64();
  out.seq = d.u64();
  out.pre_prepare_hash = d.hash();
  out.node = d.u64();
  out.a_root = d.hash();
  out.sig = get_sig(d);
  out.manifest = d.list<AttestLeafRef>(
      [](Decoder& dec) { return AttestLeafRef::decode(dec); });
  return out;
}

Hash32 CommitMsg::signing_digest() const {
  return commit_signing_digest(view, seq, pre_prepare_hash, node, a_root);
}

void CheckpointMsg::encode(Encoder& e) const {
  e.u64(seq);
  e.hash(state_digest);
  e.u64(node);
  put_sig(e, sig);
}

CheckpointMsg CheckpointMsg::decode(Decoder& d) {
  CheckpointMsg out;
  out.seq = d.u64();
  out.state_digest = d.hash();
  out.node = d.u64();
  out.sig = get_sig(d);
  return out;
}

Hash32 CheckpointMsg::signing_digest() const {
  Encoder e;
  e.u8(kCheckpointSigTag);
  e.u64(seq);
  e.hash(state_digest);
  e.u64(node);
  return hash(e.data());
}

void PreparedProof::encode(Encoder& e) const {
  pre_prepare.encode(e);
  e.list(prepares, [](Encoder& enc, const PrepareMsg& p) { p.encode(enc); });
}

PreparedProof PreparedProof::decode(Decoder& d) {
  PreparedProof out;
  out.pre_prepare = PrePrepareMsg::decode(d);
  out.prepares =
      d.list<PrepareMsg>([](Decoder& dec) { return PrepareMsg::decode(dec); });
  return out;
}

namespace {

void encode_view_change_body(Encoder& e, const ViewChangeMsg& m) {
  e.u64(m.new_view);
  e.u64(m.node);
  e.u64(m.last_stable_seq);
  e.hash(m.checkpoint_digest);
  e.list(m.checkpoint_proof,
         [](Encoder& enc, const CheckpointMsg& c) { c.encode(enc); });
  e.list(m.prepared,
         [](Encoder& enc, const PreparedProof& p) { p.encode(enc); });
  e.list(m.equivocation_proof,
         [](Encoder& enc, const PrePrepareMsg& p) { p.encode(enc); });
}

}  // namespace

void ViewChangeMsg::encode(Encoder& e) const {
  encode_view_change_body(e, *this);
  put_sig(e, sig);
}

ViewChangeMsg ViewChangeMsg::decode(Decoder& d) {
  ViewChangeMsg out;
  out.new_view = d.u64();
  out.node = d.u64();
  out.last_stable_seq = d.u64();
  out.checkpoint_digest = d.hash();
  out.checkpoint_proof = d.list<CheckpointMsg>(
      [](Decoder& dec) { return CheckpointMsg::decode(dec); });
  out.prepared = d.list<PreparedProof>(
      [](Decoder& dec) { return PreparedProof::decode(dec); });
  out.equivocation_proof = d.list<PrePrepareMsg>(
      [](Decoder& dec) { return PrePrepareMsg::decode(dec); });
  out.sig = get_sig(d);
  return out;
}

Hash32 ViewChangeMsg::signing_digest() const {
  Encoder e;
  e.u8(kViewChangeSigTag);
  encode_view_change_body(e, *this);
  return hash(e.data());
}

namespace {

void encode_new_view_body(Encoder& e, const NewViewMsg& m) {
  e.u64(m.new_view);
  e.u64(m.node);
  e.list(m.view_changes,
         [](Encoder& enc, const ViewChangeMsg& v) { v.encode(enc); });
  e.list(m.re_proposals,
         [](Encoder& enc, const PrePrepareMsg& p) { p.encode(enc); });
}

}  // namespace

void NewViewMsg::encode(Encoder& e) const {
  encode_new_view_body(e, *this);
  put_sig(e, sig);
}

NewViewMsg NewViewMsg::decode(Decoder& d) {
  NewViewMsg out;
  out.new_view = d.u64();
  out.node = d.u64();
  out.view_changes = d.list<ViewChangeMsg>(
      [](Decoder& dec) { return ViewChangeMsg::decode(dec); });
  out.re_proposals = d.list<PrePrepareMsg>(
      [](Decoder& dec) { return PrePrepareMsg::decode(dec); });
  out.sig = get_sig(d);
  return out;
}

Hash32 NewViewMsg::signing_digest() const {
  Encoder e;
  e.u8(kNewViewSigTag);
  encode_new_view_body(e, *this);
  return hash(e.data());
}

void FetchRequest::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(pre_prepare_hash);
  e.u64(requester);
  e.boolean(want_pre_prepare);
  e.optional(want_prepare_of, [](Encoder& enc, uint64_t v) { enc.u64(v); });
}

FetchRequest FetchRequest::decode(Decoder& d) {
  FetchRequest out;
  out.view = d.u64();
  out.seq = d.u64();
  out.pre_prepare_hash = d.hash();
  out.requester = d.u64();
  out.want_pre_prepare = d.boolean();
  out.want_prepare_of =
      d.optional<uint64_t>([](Decoder& dec) { return dec.u64(); });
  return out;
}

void FetchResponse::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(pre_prepare_hash);
  e.optional(pre_prepare,
             [](Encoder& enc, const PrePrepareMsg& p) { p.encode(enc); });
  e.optional(prepare, [](Encoder& enc, const PrepareMsg& p) { p.encode(enc); });
}

FetchResponse FetchResponse::decode(Decoder& d) {
  FetchResponse out;
  out.view = d.u64();
  out.seq = d.u64();
  out.pre_prepare_hash = d.hash();
  out.pre_prepare = d.optional<PrePrepareMsg>(
      [](Decoder& dec) { return PrePrepareMsg::decode(dec); });
  out.prepare = d.optional<PrepareMsg>(
      [](Decoder& dec) { return PrepareMsg::decode(dec); });
  return out;
}

Hash32 pre_prepare_signing_digest(uint64_t view, uint64_t seq,
                                  const Hash32& h_ops, const Hash32& r_root) {
  Encoder e;
  e.u8(kPrePrepareSigTag);
  e.u64(view);
  e.u64(seq);
  e.hash(h_ops);
  e.hash(r_root);
  return hash(e.data());
}

Hash32 pre_prepare_hash_of(uint64_t view, uint64_t seq, const Hash32& h_ops,
                           const Hash32& r_root, const Signature& sig) {
  Encoder e;
  e.u8(kPrePrepareHashTag);
  e.u64(view);
  e.u64(seq);
  e.hash(h_ops);
  e.hash(r_root);
  put_sig(e, sig);
  return hash(e.data());
}

Hash32 prepare_signing_digest(uint64_t view, uint64_t seq, const Hash32& j,
                              uint64_t node, const Hash32& r_root) {
  Encoder e;
  e.u8(kPrepareSigTag);
  e.u64(view);
  e.u64(seq);
  e.hash(j);
  e.u64(node);
  e.hash(r_root);
  return hash(e.data());
}

Hash32 commit_signing_digest(uint64_t view, uint64_t seq, const Hash32& j,
                             uint64_t node, const Hash32& a_root) {
  Encoder e;
  e.u8(kCommitSigTag);
  e.u64(view);
  e.u64(seq);
  e.hash(j);
  e.u64(node);
  e.hash(a_root);
  return hash(e.data());
}

Bytes frame_message(MsgType type, const Bytes& payload) {
  Bytes out;
  out.reserve(payload.size() + 1);
  out.push_back(static_cast<uint8_t>(type));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Frame parse_frame(ByteView data) {
  if (data.empty()) throw CodecError("empty frame");
  uint8_t t = data[0];
  switch (t) {
    case 0x01: case 0x02: case 0x10: case 0x11: case 0x12:
    case 0x13: case 0x14: case 0x15: case 0x16: case 0x17:
    case 0x30: case 0x31: case 0x32: case 0x33: case 0x34:
    case 0x35: case 0x36: case 0x37:
      break;
    default:
      throw CodecError("unknown frame type");
  }
  Frame f;
  f.type = static_cast<MsgType>(t);
  f.payload.assign(data.begin() + 1, data.end());
  return f;
}

}  // namespace credo
