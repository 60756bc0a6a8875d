// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// The untrusted per-node inference proxy and the client-side discovery
// helpers. A proxy indexes the slots its own node ordered, assembles
// response envelopes (covered results plus certificate, or a certified
// failure) from slot evidence, and serves them to clients over the same
// frame transport the nodes use. Nothing a proxy returns is taken on
// faith: clients verify every response against the cluster keys from the
// signed discovery file, and retry another proxy on timeout or garbage.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credo/certificate.hpp"
#include "credo/coordinator.hpp"
#include "credo/domain.hpp"
#include "credo/state.hpp"

namespace credo {

/// Builds the response envelope for one ordered request op, from slot
/// evidence alone. Success needs at least N - f providers whose result,
/// ordering signature, and more-than-f attestations are all on hand;
/// otherwise a certified failure needs more than f committers carrying the
/// op's failure leaf. nullopt when the slot supports neither (the client
/// retries another proxy).
std::optional<InferenceResponse> assemble_response(const OrderedSlot& slot,
                                                   size_t op_index,
                                                   const ClusterConfig& config);

/// Acknowledgement of an ordered group op: the fold outcome at its slot.
/// Acks carry no certificate; an owner who wants proof reads the group
/// listing back through an inference it can verify.
struct GroupOpAck {
  Hash32 op_id{};
  std::string group_id;
  OpKind kind = OpKind::define_group;
  uint64_t version = 0;
  OpStatus status = OpStatus::ok;
  std::string reason;
  uint64_t seq = 0;

  bool operator==(const GroupOpAck&) const = default;

  void encode(Encoder& e) const;
  static GroupOpAck decode(Decoder& d);
};

/// One group in a proxy's listing: every version the answering node has
/// ordered, materialized with status, plus which one is active.
struct GroupInfo {
  std::string group_id;
  std::optional<uint64_t> active;
  std::vector<ModelGroup> versions;  // ascending version

  bool operator==(const GroupInfo&) const = default;

  void encode(Encoder& e) const;
  static GroupInfo decode(Decoder& d);
};

/// Transport-free proxy logic for one node. The owner wires submission
/// callbacks that fan requests out to every node (the proxy forwards, it
/// never fabricates), feeds ordered slots in, and pumps client frames
/// through handle_frame.
class ProxyCore {
 public:
  struct Hooks {
    // Fan a client request / owner op out to all nodes, this one included.
    std::function<void(const InferenceRequest&)> submit_request;
    std::function<void(const GroupOp&)> submit_group_op;
  };

  ProxyCore(ClusterConfig config, const StateMachine* state, Hooks hooks)
      : config_(std::move(config)), state_(state), hooks_(std::move(hooks)) {}

  /// Feed from the coordinator's ordered handler. Builds and caches one
  /// response per request op and one ack per group op. First response per
  /// request id wins, so retries that get re-ordered as duplicates still
  /// read the original certificate.
  void on_ordered(const OrderedSlot& slot);

  /// One in-flight update per group: a second group op for a group whose
  /// previous op this proxy accepted but has not yet seen ordered is
  /// refused with a reason.
  std::optional<std::string> admit_group_op(const GroupOp& op);

  std::optional<InferenceResponse> response_for(const Hash32& request_id) const;
  std::optional<GroupOpAck> ack_for(const Hash32& op_id) const;
  std::vector<GroupInfo> list_groups() const;

  /// Serves one client frame; the reply frame is returned. Unknown or
  /// malformed frames get nullopt (the connection owner drops them).
  std::optional<Bytes> handle_frame(ByteView frame);

  size_t cached_responses() const { return responses_.size(); }

 private:
  ClusterConfig config_;
  const StateMachine* state_;
  Hooks hooks_;
  std::map<Hash32, InferenceResponse> responses_;
  std::map<Hash32, GroupOpAck> acks_;
  std::map<std::string, Hash32> inflight_update_;  // group -> op_id
};

// ---- Discovery ----
//
// The trusted discovery service is realized as a signed file at a
// well-known path: JSON carrying the hex canonical cluster encoding and an
// Ed25519 signature over its tagged hash. Clients hold only the discovery
// public key; everything else, including every node key, arrives through
// this file.

Hash32 discovery_signing_digest(const ClusterConfig& config);

/// Serializes and signs the config. Throws std::runtime_error on I/O
/// failure.
void write_discovery_file(const std::string& path, const ClusterConfig& config,
                          const KeyPair& discovery_key);

/// Loads and verifies. nullopt on unreadable file, malformed JSON or hex,
/// bad signature, or a config that fails its own invariants.
std::optional<ClusterConfig> load_discovery_file(const std::string& path,
                                                 const PublicKey& discovery_pub);

// ---- Client-side frame helpers ----
//
// The client SDK is frame-in, frame-out: callers own the transport (live
// sockets or the simulated network) and the retry loop over at most f + 1
// proxies; these helpers build and parse the frames and never trust the
// payload beyond decoding it.

Bytes encode_infer_submit(const InferenceRequest& req);
Bytes encode_infer_poll(const Hash32& request_id);
Bytes encode_group_op_submit(const GroupOp& op);
Bytes encode_group_op_poll(const Hash32& op_id);
Bytes encode_list_groups();

/// Decodes an infer_reply frame. outer nullopt: not a well-formed reply
/// frame. inner nullopt: proxy has no response yet.
std::optional<std::optional<InferenceResponse>> parse_infer_reply(
    ByteView frame);
std::optional<std::optional<GroupOpAck>> parse_group_op_reply(ByteView frame);
std::optional<std::vector<GroupInfo>> parse_group_listing(ByteView frame);

}  // namespace credo
