// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Wire protocol: agreement-batch operations, the three-phase protocol
// messages, view-change machinery, and the tree leaf constructions they
// bind. Every signature in the system covers SHA-256 of (one domain tag
// byte || the message's canonical encoding minus its signature field).
//
// Signed-tuple table (tag: fields under the signature):
//   0x01 client request:   request_id, group_id, input, epsilon?,
//                          client_pub, client_nonce        (domain.hpp)
//   0x02 owner group op:   kind, group_id, definition?, owner_pub, nonce
//   0x10 PRE-PREPARE:      view, seq, h_ops, r_root
//   0x11 PREPARE:          view, seq, j, node, r_root
//   0x12 COMMIT:           view, seq, j, node, a_root
//   0x13 VIEW-CHANGE:      everything but the signature
//   0x14 NEW-VIEW:         everything but the signature
//   0x15 CHECKPOINT:       seq, state_digest, node
//   0x20 discovery file:   cluster config + group seed    (config_io)
// where j = h_pp = H(0x18 || view || seq || h_ops || r_root || sig), the
// hash of the full signed PRE-PREPARE, recomputable from certificate
// fields alone.
//
// Tree leaf domains (first byte of the leaf preimage):
//   result tree R:   0x52 request+result, 0x4D request without result,
//                    0x47 group operation entry, 0x4E empty filler batch
//   attestation A:   0x57 whole-batch (another node's R root),
//                    0x53 single attested request+result,
//                    0x46 agreed failure record

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credo/domain.hpp"
#include "credo/merkle.hpp"

namespace credo {

// Signature domain tags.
inline constexpr uint8_t kGroupOpSigTag = 0x02;
inline constexpr uint8_t kPrePrepareSigTag = 0x10;
inline constexpr uint8_t kPrepareSigTag = 0x11;
inline constexpr uint8_t kCommitSigTag = 0x12;
inline constexpr uint8_t kViewChangeSigTag = 0x13;
inline constexpr uint8_t kNewViewSigTag = 0x14;
inline constexpr uint8_t kCheckpointSigTag = 0x15;
inline constexpr uint8_t kPrePrepareHashTag = 0x18;
inline constexpr uint8_t kDiscoverySigTag = 0x20;
inline constexpr uint8_t kOpsHashTag = 0x4F;

enum class OpKind : uint8_t {
  request_inf = 0,
  define_group = 1,
  activate_group = 2,
  retire_group = 3,
};

enum class OpStatus : uint8_t {
  ok = 0,
  rejected = 1,
};

struct GroupDefinition {
  std::vector<ModelDescriptor> models;
  distance::DistanceDescriptor distance;

  bool operator==(const GroupDefinition&) const = default;

  void encode(Encoder& e) const;
  static GroupDefinition decode(Decoder& d);
};

/// Owner-submitted group operation (define/activate/retire), signed by the
/// owner key. op_id = H(owner_pub || 0x1F || nonce) dedups retries.
struct GroupOp {
  OpKind kind = OpKind::define_group;
  std::string group_id;
  std::optional<GroupDefinition> definition;  // define only
  PublicKey owner_pub{};
  Bytes owner_nonce;
  Signature owner_sig{};

  bool operator==(const GroupOp&) const = default;

  void encode(Encoder& e) const;
  static GroupOp decode(Decoder& d);
  Hash32 signing_digest() const;
  Hash32 op_id() const;
};

GroupOp make_signed_group_op(const KeyPair& owner, Bytes nonce, OpKind kind,
                             std::string group_id,
                             std::optional<GroupDefinition> definition);
bool verify_group_op(const GroupOp& op);

/// One ordered entry of an agreement batch. The primary annotates each
/// entry with the outcome of the deterministic version fold (the chosen or
/// assigned version, or a rejection); backups recompute the fold and refuse
/// batches whose annotations disagree. H(ops) covers the annotations, so
/// ordering fixes them.
struct OpEntry {
  OpKind kind = OpKind::request_inf;
  std::optional<InferenceRequest> request;  // request_inf
  std::optional<GroupOp> group_op;          // define/activate/retire
  uint64_t version = 0;  // chosen (request) or assigned/affected version
  OpStatus status = OpStatus::ok;
  std::string reason;  // set when rejected

  bool operator==(const OpEntry&) const = default;

  void encode(Encoder& e) const;
  static OpEntry decode(Decoder& d);
};

Hash32 hash_ops(const std::vector<OpEntry>& ops);

// ---- Tree leaf constructions ----

/// Leaf binding (request, one node's result) into that node's R tree.
Bytes result_leaf(const InferenceRequest& request, const InferenceResult& result);
/// Leaf recording that the node holds no result for this request.
Bytes missing_result_leaf(const InferenceRequest& request);
/// Leaf binding a group operation entry (with annotations) into R.
Bytes group_op_leaf(const OpEntry& entry);
/// Sole leaf of the R tree of an empty filler batch.
Bytes noop_leaf(uint64_t view, uint64_t seq);

/// Builds a node's R tree for a batch: one leaf per op in batch order.
/// results_by_op[k] is the node's result for request op k, if any.
merkle::Tree build_result_tree(
    uint64_t view, uint64_t seq, const std::vector<OpEntry>& ops,
    const std::map<uint64_t, InferenceResult>& results_by_op);

/// Agreed failure for one request: quorum unsatisfied or op rejected.
struct FailureRecord {
  Hash32 request_id{};
  std::string group_id;
  uint64_t version = 0;
  std::string reason;

  bool operator==(const FailureRecord&) const = default;

  void encode(Encoder& e) const;
  static FailureRecord decode(Decoder& d);
};

/// Attestation-tree leaves.
Bytes whole_batch_leaf(const Hash32& r_root);
Bytes single_attest_leaf(const InferenceRequest& request,
                         const InferenceResult& result);
Bytes failure_leaf(const FailureRecord& record);

/// Descriptor of one A-tree leaf, shipped with COMMIT so any holder of the
/// slot's result sets can rebuild the tree byte-for-byte.
struct AttestLeafRef {
  enum class Kind : uint8_t {
    whole_batch = 0,  // node: whose R root
    single = 1,       // (op_index, node): one attested result
    failure = 2,      // op_index: agreed failure for that request op
  };
  Kind kind = Kind::whole_batch;
  uint64_t node = 0;
  uint64_t op_index = 0;

  bool operator==(const AttestLeafRef&) const = default;

  void encode(Encoder& e) const;
  static AttestLeafRef decode(Decoder& d);
};

/// The failure record every honest node derives for a request op that
/// cannot yield a certified result: rejected ops carry their fold reason,
/// every other attested failure carries the fixed reason
/// "quorum unsatisfied". Byte-identical across nodes because it reads only
/// the agreed op entry.
FailureRecord failure_record_for(const OpEntry& op);

/// Reconstructs the exact leaf bytes an attestation manifest entry refers
/// to, from slot data: the batch ops, each provider's result-tree root, and
/// the per-op result sets. nullopt when the referenced result or root is
/// not held (the caller fetches it before counting the COMMIT).
std::optional<Bytes> attest_leaf_bytes(
    const AttestLeafRef& ref, const std::vector<OpEntry>& ops,
    const std::map<uint64_t, Hash32>& r_roots,
    const std::map<uint64_t, std::map<uint64_t, InferenceResult>>&
        results_by_op);

// ---- Protocol messages ----

struct PrePrepareMsg {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 h_ops{};
  Hash32 r_root{};
  Signature sig{};
  // Accompaniment, bound through h_ops and r_root:
  std::vector<OpEntry> ops;
  std::vector<InferenceResult> results;  // primary's results, any order

  bool operator==(const PrePrepareMsg&) const = default;

  void encode(Encoder& e) const;
  static PrePrepareMsg decode(Decoder& d);
  Hash32 signing_digest() const;
  /// j: hash of the signed message, independent of the accompaniment.
  Hash32 msg_hash() const;
};

struct PrepareMsg {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 pre_prepare_hash{};  // j
  uint64_t node = 0;
  Hash32 r_root{};
  Signature sig{};
  std::vector<InferenceResult> results;  // sender's results, bound by r_root

  bool operator==(const PrepareMsg&) const = default;

  void encode(Encoder& e) const;
  static PrepareMsg decode(Decoder& d);
  Hash32 signing_digest() const;
};

struct CommitMsg {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 pre_prepare_hash{};  // j
  uint64_t node = 0;
  Hash32 a_root{};
  Signature sig{};
  std::vector<AttestLeafRef> manifest;  // A-tree leaves, in tree order

  bool operator==(const CommitMsg&) const = default;

  void encode(Encoder& e) const;
  static CommitMsg decode(Decoder& d);
  Hash32 signing_digest() const;
};

struct CheckpointMsg {
  uint64_t seq = 0;
  Hash32 state_digest{};
  uint64_t node = 0;
  Signature sig{};

  bool operator==(const CheckpointMsg&) const = default;

  void encode(Encoder& e) const;
  static CheckpointMsg decode(Decoder& d);
  Hash32 signing_digest() const;
};

/// Proof that a batch reached the prepare threshold: the PRE-PREPARE plus
/// enough PREPAREs that any later view must carry the batch forward.
struct PreparedProof {
  PrePrepareMsg pre_prepare;
  std::vector<PrepareMsg> prepares;

  bool operator==(const PreparedProof&) const = default;

  void encode(Encoder& e) const;
  static PreparedProof decode(Decoder& d);
};

struct ViewChangeMsg {
  uint64_t new_view = 0;
  uint64_t node = 0;
  uint64_t last_stable_seq = 0;
  Hash32 checkpoint_digest{};
  std::vector<CheckpointMsg> checkpoint_proof;
  std::vector<PreparedProof> prepared;
  // Conflicting PRE-PREPAREs observed at one (view, seq): equivocation
  // evidence, carried for the record.
  std::vector<PrePrepareMsg> equivocation_proof;
  Signature sig{};

  bool operator==(const ViewChangeMsg&) const = default;

  void encode(Encoder& e) const;
  static ViewChangeMsg decode(Decoder& d);
  Hash32 signing_digest() const;
};

struct NewViewMsg {
  uint64_t new_view = 0;
  uint64_t node = 0;
  std::vector<ViewChangeMsg> view_changes;
  std::vector<PrePrepareMsg> re_proposals;  // ascending seq, gaps filled
  Signature sig{};

  bool operator==(const NewViewMsg&) const = default;

  void encode(Encoder& e) const;
  static NewViewMsg decode(Decoder& d);
  Hash32 signing_digest() const;
};

/// Asks a peer for slot data this node is missing: the PRE-PREPARE and/or
/// one node's PREPARE (with its results). Unsigned; responses carry their
/// own signatures.
struct FetchRequest {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 pre_prepare_hash{};
  uint64_t requester = 0;
  bool want_pre_prepare = false;
  std::optional<uint64_t> want_prepare_of;

  bool operator==(const FetchRequest&) const = default;

  void encode(Encoder& e) const;
  static FetchRequest decode(Decoder& d);
};

struct FetchResponse {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 pre_prepare_hash{};
  std::optional<PrePrepareMsg> pre_prepare;
  std::optional<PrepareMsg> prepare;

  bool operator==(const FetchResponse&) const = default;

  void encode(Encoder& e) const;
  static FetchResponse decode(Decoder& d);
};

// ---- Shared signing digests ----
//
// Signers and verifiers both go through these, so the bytes under a
// signature are defined in exactly one place.

Hash32 pre_prepare_signing_digest(uint64_t view, uint64_t seq,
                                  const Hash32& h_ops, const Hash32& r_root);
Hash32 pre_prepare_hash_of(uint64_t view, uint64_t seq, const Hash32& h_ops,
                           const Hash32& r_root, const Signature& sig);
Hash32 prepare_signing_digest(uint64_t view, uint64_t seq, const Hash32& j,
                              uint64_t node, const Hash32& r_root);
Hash32 commit_signing_digest(uint64_t view, uint64_t seq, const Hash32& j,
                             uint64_t node, const Hash32& a_root);

// ---- Transport framing ----

enum class MsgType : uint8_t {
  client_request = 0x01,
  group_op = 0x02,
  pre_prepare = 0x10,
  prepare = 0x11,
  commit = 0x12,
  view_change = 0x13,
  new_view = 0x14,
  checkpoint = 0x15,
  fetch = 0x16,
  fetch_response = 0x17,
  // Client-to-proxy RPC, same frame transport as node-to-node traffic.
  infer_submit = 0x30,
  infer_poll = 0x31,
  infer_reply = 0x32,
  group_op_submit = 0x33,
  group_op_poll = 0x34,
  group_op_reply = 0x35,
  list_groups = 0x36,
  group_listing = 0x37,
};

/// One node-to-node frame: a type byte followed by the message encoding.
Bytes frame_message(MsgType type, const Bytes& payload);

struct Frame {
  MsgType type;
  Bytes payload;
};

/// Throws CodecError on unknown type or empty frame.
Frame parse_frame(ByteView data);

}  // namespace credo
