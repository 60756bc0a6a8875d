// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Core domain values shared by every component: cluster membership, model
// groups, inference requests and results. All types are immutable values
// with canonical encodings, so hashes and signatures over them are
// well-defined everywhere.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credo/bytes.hpp"
#include "credo/codec.hpp"
#include "credo/crypto.hpp"
#include "credo/distance.hpp"

namespace credo {

/// Domain byte prepended to the canonical encoding of a client inference
/// request before hashing for signature purposes. Keeps client signatures
/// from colliding with protocol-message signatures (tags 0x10..).
inline constexpr uint8_t kRequestSigTag = 0x01;

struct NodeIdentity {
  PublicKey public_key{};
  std::string endpoint;  // transport address, e.g. "127.0.0.1:9001"
  uint64_t index = 0;    // rank in lexicographic public-key order

  bool operator==(const NodeIdentity&) const = default;

  void encode(Encoder& e) const;
  static NodeIdentity decode(Decoder& d);
};

struct ClusterConfig {
  std::vector<NodeIdentity> nodes;  // sorted by public key, index = position
  uint64_t f = 0;                   // tolerated untrustworthy nodes
  uint64_t view_timeout_us = 2'000'000;
  uint64_t exec_batch_max = 4;
  uint64_t agree_batch_max = 25;
  uint64_t agree_pipeline = 2;
  uint64_t checkpoint_interval = 16;  // batches between checkpoints

  bool operator==(const ClusterConfig&) const = default;

  uint64_t n() const { return nodes.size(); }

  /// Checks every structural invariant: N >= 3f + 1, strict key order,
  /// index/position agreement, batch parameters >= 1. Returns an error
  /// description, or nullopt when valid.
  std::optional<std::string> validate() const;

  void encode(Encoder& e) const;
  static ClusterConfig decode(Decoder& d);
};

struct ModelDescriptor {
  std::string model_url;
  std::map<std::string, std::string> params;
  uint64_t input_dim = 0;
  uint64_t output_dim = 0;
  Hash32 weights_digest{};

  bool operator==(const ModelDescriptor&) const = default;

  void encode(Encoder& e) const;
  static ModelDescriptor decode(Decoder& d);
};

enum class GroupStatus : uint8_t {
  defined = 0,
  active = 1,
  retired = 2,
};

std::string group_status_name(GroupStatus s);

struct ModelGroup {
  std::string group_id;
  uint64_t version = 1;  // starts at 1, +1 per successful define
  std::vector<ModelDescriptor> models;
  distance::DistanceDescriptor distance;
  GroupStatus status = GroupStatus::defined;

  bool operator==(const ModelGroup&) const = default;

  /// nullopt when models is empty or dimensions disagree across models.
  std::optional<std::string> validate() const;

  void encode(Encoder& e) const;
  static ModelGroup decode(Decoder& d);
};

struct InferenceRequest {
  Hash32 request_id{};  // canonical_request_id(client_pub, client_nonce)
  std::string group_id;
  std::vector<double> input;
  std::optional<double> epsilon_override;  // nonnegative when present
  PublicKey client_pub{};
  Bytes client_nonce;
  Signature client_sig{};

  bool operator==(const InferenceRequest&) const = default;

  void encode(Encoder& e) const;
  static InferenceRequest decode(Decoder& d);

  /// Digest the client signs: H(kRequestSigTag || fields minus client_sig).
  Hash32 signing_digest() const;
};

/// Builds a request with a correct request_id and client signature.
InferenceRequest make_signed_request(const KeyPair& client, Bytes nonce,
                                     std::string group_id,
                                     std::vector<double> input,
                                     std::optional<double> epsilon_override);

/// Total verification: request_id derivation plus signature. Never throws.
bool verify_request(const InferenceRequest& req);

struct InferenceResult {
  Hash32 request_id{};
  uint64_t node_index = 0;
  std::string group_id;
  uint64_t group_version = 0;
  std::vector<double> output;
  Hash32 model_digest{};  // weights_digest of the executing model

  bool operator==(const InferenceResult&) const = default;

  void encode(Encoder& e) const;
  static InferenceResult decode(Decoder& d);
};

/// H(client_id || 0x1F || nonce). Stable across processes; the separator
/// keeps (ab, c) and (a, bc) distinct.
Hash32 canonical_request_id(ByteView client_id, ByteView nonce);

/// p = view mod N.
uint64_t primary_index(uint64_t view, const ClusterConfig& config);

/// Deterministic model partition: the ordered model list is split into
/// contiguous chunks of ceil(|G|/d) models and node rank k serves chunk
/// (k mod num_chunks). With |G| >= d chunks are disjoint and nodes cover
/// the group; with |G| < d every model is replicated across several nodes
/// and every node still holds at least one model.
std::vector<ModelDescriptor> assigned_models(uint64_t owner_node_count,
                                             const ModelGroup& group,
                                             const NodeIdentity& node);

}  // namespace credo
