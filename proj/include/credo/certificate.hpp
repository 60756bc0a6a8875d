// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Inference certificates and their verification. A certificate convinces a
// client, holding only the cluster membership, that at least N - f nodes
// ordered its request in one agreement batch and that every returned
// result was judged within the distance bound by more than f nodes. No
// proxy or node is trusted: every claim is checked against reconstructed
// tree roots and per-node signatures, and every byte of the certificate is
// load-bearing in those checks.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "credo/domain.hpp"
#include "credo/merkle.hpp"
#include "credo/messages.hpp"

namespace credo {

/// One node's attestation of one result: a path from a leaf covering the
/// result to the attestor's attestation-tree root, which the attestor's
/// COMMIT signature covers. whole_batch leaves attest the result-provider's
/// entire result tree root; single leaves attest the one (request, result).
struct CertAttestation {
  uint64_t attestor = 0;
  AttestLeafRef::Kind kind = AttestLeafRef::Kind::whole_batch;
  merkle::AuthPath path;

  bool operator==(const CertAttestation&) const = default;

  void encode(Encoder& e) const;
  static CertAttestation decode(Decoder& d);
};

struct NodeSigs {
  // PREPARE signature over the node's own result-tree root. Absent for the
  // primary, whose PRE-PREPARE signature plays this role.
  std::optional<Signature> order_sig;
  // COMMIT signature over the node's attestation-tree root.
  std::optional<Signature> commit_sig;

  bool operator==(const NodeSigs&) const = default;

  void encode(Encoder& e) const;
  static NodeSigs decode(Decoder& d);
};

struct InferenceCertificate {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 h_ops{};
  Hash32 primary_r_root{};
  Signature pre_prepare_sig{};
  std::map<uint64_t, NodeSigs> sigs;                  // S
  std::map<uint64_t, merkle::AuthPath> result_paths;  // P, per result node
  std::map<uint64_t, std::vector<CertAttestation>> attestations;  // D

  bool operator==(const InferenceCertificate&) const = default;

  void encode(Encoder& e) const;
  static InferenceCertificate decode(Decoder& d);

  /// j: recomputed hash of the signed PRE-PREPARE these fields pin down.
  Hash32 pre_prepare_hash() const;
};

/// Certifies an agreed failure (quorum unsatisfied or op rejected): more
/// than f nodes committed attestation trees containing the failure record.
struct FailureCertificate {
  uint64_t view = 0;
  uint64_t seq = 0;
  Hash32 h_ops{};
  Hash32 primary_r_root{};
  Signature pre_prepare_sig{};
  FailureRecord record;

  struct Attest {
    uint64_t attestor = 0;
    merkle::AuthPath path;
    Signature commit_sig{};

    bool operator==(const Attest&) const = default;

    void encode(Encoder& e) const;
    static Attest decode(Decoder& d);
  };
  std::vector<Attest> attests;

  bool operator==(const FailureCertificate&) const = default;

  void encode(Encoder& e) const;
  static FailureCertificate decode(Decoder& d);

  Hash32 pre_prepare_hash() const;
};

/// What a proxy returns for one request: either covered results plus their
/// certificate, or a certified failure. The distance descriptor and the
/// epsilon actually applied let the client interpret the result spread.
struct InferenceResponse {
  enum class Kind : uint8_t { success = 0, failure = 1 };
  Kind kind = Kind::failure;
  Hash32 request_id{};
  std::vector<InferenceResult> results;  // ascending node index
  std::optional<InferenceCertificate> certificate;
  std::optional<FailureCertificate> failure;
  distance::DistanceDescriptor distance;
  double effective_epsilon = 0.0;

  bool operator==(const InferenceResponse&) const = default;

  void encode(Encoder& e) const;
  static InferenceResponse decode(Decoder& d);
};

/// Certificate verification, total: any malformed, incomplete, or forged
/// certificate returns false, never throws. Checks, in order: at least
/// N - f results from distinct in-range nodes, all for this request and one
/// group version; the primary's PRE-PREPARE signature; per result, the
/// reconstruction of the provider's result-tree root from its auth path and
/// the provider's ordering signature over that root; per result, more than
/// f distinct attestors whose attestation-tree roots reconstruct from their
/// paths and whose COMMIT signatures verify over those roots.
bool verify_cert(const InferenceRequest& request,
                 const std::vector<InferenceResult>& results,
                 const InferenceCertificate& cert,
                 const ClusterConfig& config);

/// Total verification of a certified failure: the record must name this
/// request and more than f distinct attestors must have committed
/// attestation trees containing the failure leaf.
bool verify_failure(const InferenceRequest& request,
                    const FailureCertificate& cert,
                    const ClusterConfig& config);

/// Verifies a full response envelope against the request.
bool verify_response(const InferenceRequest& request,
                     const InferenceResponse& response,
                     const ClusterConfig& config);

}  // namespace credo
