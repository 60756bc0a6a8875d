// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/certificate.hpp"

#include <set>

namespace credo {

namespace {

void put_sig(Encoder& e, const Signature& s) {
  e.fixed(ByteView(s.data(), s.size()));
}

Signature get_sig(Decoder& d) {
  Signature s{};
  d.fixed(std::span<uint8_t>(s.data(), s.size()));
  return s;
}

}  // namespace

void CertAttestation::encode(Encoder& e) const {
  e.u64(attestor);
  e.u8(static_cast<uint8_t>(kind));
  path.encode(e);
}

CertAttestation CertAttestation::decode(Decoder& d) {
  CertAttestation out;
  out.attestor = d.u64();
  uint8_t k = d.u8();
  if (k > static_cast<uint8_t>(AttestLeafRef::Kind::single)) {
    throw CodecError("certificate attestation must be whole_batch or single");
  }
  out.kind = static_cast<AttestLeafRef::Kind>(k);
  out.path = merkle::AuthPath::decode(d);
  return out;
}

void NodeSigs::encode(Encoder& e) const {
  e.optional(order_sig, [](Encoder& enc, const Signature& s) { put_sig(enc, s); });
  e.optional(commit_sig, [](Encoder& enc, const Signature& s) { put_sig(enc, s); });
}

NodeSigs NodeSigs::decode(Decoder& d) {
  NodeSigs out;
  out.order_sig = d.optional<Signature>([](Decoder& dec) { return get_sig(dec); });
  out.commit_sig = d.optional<Signature>([](Decoder& dec) { return get_sig(dec); });
  return out;
}

namespace {

template <typename V, typename PutV>
void encode_u64_map(Encoder& e, const std::map<uint64_t, V>& m, PutV&& put) {
  e.u32be(static_cast<uint32_t>(m.size()));
  for (const auto& [k, v] : m) {
    e.u64(k);
    put(e, v);
  }
}

template <typename V, typename GetV>
std::map<uint64_t, V> decode_u64_map(Decoder& d, GetV&& get) {
  uint32_t n = d.u32be();
  if (n > d.remaining()) throw CodecError("map count exceeds buffer");
  std::map<uint64_t, V> out;
  for (uint32_t i = 0; i < n; i++) {
    uint64_t k = d.u64();
    V v = get(d);
    if (!out.emplace(k, std::move(v)).second) {
      throw CodecError("duplicate map key");
    }
  }
  return out;
}

}  // namespace

void InferenceCertificate::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(h_ops);
  e.hash(primary_r_root);
  put_sig(e, pre_prepare_sig);
  encode_u64_map(e, sigs, [](Encoder& enc, const NodeSigs& s) { s.encode(enc); });
  encode_u64_map(e, result_paths,
                 [](Encoder& enc, const merkle::AuthPath& p) { p.encode(enc); });
  encode_u64_map(e, attestations,
                 [](Encoder& enc, const std::vector<CertAttestation>& v) {
                   enc.list(v, [](Encoder& e2, const CertAttestation& a) {
                     a.encode(e2);
                   });
                 });
}

InferenceCertificate InferenceCertificate::decode(Decoder& d) {
  InferenceCertificate out;
  out.view = d.u64();
  out.seq = d.u64();
  out.h_ops = d.hash();
  out.primary_r_root = d.hash();
  out.pre_prepare_sig = get_sig(d);
  out.sigs = decode_u64_map<NodeSigs>(
      d, [](Decoder& dec) { return NodeSigs::decode(dec); });
  out.result_paths = decode_u64_map<merkle::AuthPath>(
      d, [](Decoder& dec) { return merkle::AuthPath::decode(dec); });
  out.attestations = decode_u64_map<std::vector<CertAttestation>>(
      d, [](Decoder& dec) {
        return dec.list<CertAttestation>(
            [](Decoder& d2) { return CertAttestation::decode(d2); });
      });
  return out;
}

Hash32 InferenceCertificate::pre_prepare_hash() const {
  return pre_prepare_hash_of(view, seq, h_ops, primary_r_root, pre_prepare_sig);
}

void FailureCertificate::Attest::encode(Encoder& e) const {
  e.u64(attestor);
  path.encode(e);
  put_sig(e, commit_sig);
}

FailureCertificate::Attest FailureCertificate::Attest::decode(Decoder& d) {
  Attest out;
  out.attestor = d.u64();
  out.path = merkle::AuthPath::decode(d);
  out.commit_sig = get_sig(d);
  return out;
}

void FailureCertificate::encode(Encoder& e) const {
  e.u64(view);
  e.u64(seq);
  e.hash(h_ops);
  e.hash(primary_r_root);
  put_sig(e, pre_prepare_sig);
  record.encode(e);
  e.list(attests, [](Encoder& enc, const Attest& a) { a.encode(enc); });
}

FailureCertificate FailureCertificate::decode(Decoder& d) {
  FailureCertificate out;
  out.view = d.u64();
  out.seq = d.u64();
  out.h_ops = d.hash();
  out.primary_r_root = d.hash();
  out.pre_prepare_sig = get_sig(d);
  out.record = FailureRecord::decode(d);
  out.attests =
      d.list<Attest>([](Decoder& dec) { return Attest::decode(dec); });
  return out;
}

Hash32 FailureCertificate::pre_prepare_hash() const {
  return pre_prepare_hash_of(view, seq, h_ops, primary_r_root, pre_prepare_sig);
}

void InferenceResponse::encode(Encoder& e) const {
  e.u8(static_cast<uint8_t>(kind));
  e.hash(request_id);
  e.list(results,
         [](Encoder& enc, const InferenceResult& r) { r.encode(enc); });
  e.optional(certificate, [](Encoder& enc, const InferenceCertificate& c) {
    c.encode(enc);
  });
  e.optional(failure, [](Encoder& enc, const FailureCertificate& c) {
    c.encode(enc);
  });
  distance.encode(e);
  e.f64(effective_epsilon);
}

InferenceResponse InferenceResponse::decode(Decoder& d) {
  InferenceResponse out;
  uint8_t k = d.u8();
  if (k > static_cast<uint8_t>(Kind::failure)) {
    throw CodecError("unknown response kind");
  }
  out.kind = static_cast<Kind>(k);
  out.request_id = d.hash();
  out.results = d.list<InferenceResult>(
      [](Decoder& dec) { return InferenceResult::decode(dec); });
  out.certificate = d.optional<InferenceCertificate>(
      [](Decoder& dec) { return InferenceCertificate::decode(dec); });
  out.failure = d.optional<FailureCertificate>(
      [](Decoder& dec) { return FailureCertificate::decode(dec); });
  out.distance = distance::DistanceDescriptor::decode(d);
  out.effective_epsilon = d.f64();
  return out;
}

namespace {

/// Shared preamble: membership sanity plus the primary signature over the
/// PRE-PREPARE tuple. Fills h_pp on success.
bool check_pre_prepare_binding(uint64_t view, uint64_t seq,
                               const Hash32& h_ops, const Hash32& r_root,
                               const Signature& sig,
                               const ClusterConfig& config, Hash32& h_pp) {
  if (config.validate()) return false;
  uint64_t p = view % config.n();
  Hash32 digest = pre_prepare_signing_digest(view, seq, h_ops, r_root);
  if (!verify(config.nodes[p].public_key, digest, sig)) return false;
  h_pp = pre_prepare_hash_of(view, seq, h_ops, r_root, sig);
  return true;
}

}  // namespace

bool verify_cert(const InferenceRequest& request,
                 const std::vector<InferenceResult>& results,
                 const InferenceCertificate& cert,
                 const ClusterConfig& config) {
  try {
    const uint64_t n = config.n();
    const uint64_t f = config.f;
    if (results.size() < n - f) return false;

    Hash32 h_pp;
    if (!check_pre_prepare_binding(cert.view, cert.seq, cert.h_ops,
                                   cert.primary_r_root, cert.pre_prepare_sig,
                                   config, h_pp)) {
      return false;
    }
    const uint64_t primary = cert.view % n;

    std::set<uint64_t> providers;
    const uint64_t version = results.front().group_version;
    for (const InferenceResult& q : results) {
      const uint64_t i = q.node_index;
      if (i >= n) return false;
      if (!providers.insert(i).second) return false;
      if (q.request_id != request.request_id) return false;
      if (q.group_id != request.group_id) return false;
      if (q.group_version != version) return false;

      // Ordering proof: the provider's result-tree root reconstructed from
      // the leaf (request, result) must carry the provider's signature.
      auto pit = cert.result_paths.find(i);
      if (pit == cert.result_paths.end()) return false;
      const Hash32 m = merkle::get_merkle_root(pit->second,
                                               result_leaf(request, q));
      if (i == primary) {
        if (m != cert.primary_r_root) return false;
      } else {
        auto sit = cert.sigs.find(i);
        if (sit == cert.sigs.end() || !sit->second.order_sig) return false;
        Hash32 digest =
            prepare_signing_digest(cert.view, cert.seq, h_pp, i, m);
        if (!verify(config.nodes[i].public_key, digest,
                    *sit->second.order_sig)) {
          return false;
        }
      }

      // Trust proof: more than f distinct nodes committed attestation trees
      // containing this result (directly, or via the provider's R root).
      auto ait = cert.attestations.find(i);
      if (ait == cert.attestations.end()) return false;
      std::set<uint64_t> attestors;
      for (const CertAttestation& att : ait->second) {
        if (att.attestor >= n) return false;
        if (!attestors.insert(att.attestor).second) return false;
        Bytes leaf = att.kind == AttestLeafRef::Kind::whole_batch
                         ? whole_batch_leaf(m)
                         : single_attest_leaf(request, q);
        const Hash32 a_root = merkle::get_merkle_root(att.path, leaf);
        auto sit = cert.sigs.find(att.attestor);
        if (sit == cert.sigs.end() || !sit->second.commit_sig) return false;
        Hash32 digest = commit_signing_digest(cert.view, cert.seq, h_pp,
                                              att.attestor, a_root);
        if (!verify(config.nodes[att.attestor].public_key, digest,
                    *sit->second.commit_sig)) {
          return false;
        }
      }
      if (attestors.size() <= f) return false;
    }
    return true;
  } catch (...) {
    return false;
  }
}

bool verify_failure(const InferenceRequest& request,
                    const FailureCertificate& cert,
                    const ClusterConfig& config) {
  try {
    const uint64_t n = config.n();
    const uint64_t f = config.f;
    if (cert.record.request_id != request.request_id) return false;
    if (cert.record.group_id != request.group_id) return false;

    Hash32 h_pp;
    if (!check_pre_prepare_binding(cert.view, cert.seq, cert.h_ops,
                                   cert.primary_r_root, cert.pre_prepare_sig,
                                   config, h_pp)) {
      return false;
    }

    const Bytes leaf = failure_leaf(cert.record);
    std::set<uint64_t> attestors;
    for (const FailureCertificate::Attest& att : cert.attests) {
      if (att.attestor >= n) return false;
      if (!attestors.insert(att.attestor).second) return false;
      const Hash32 a_root = merkle::get_merkle_root(att.path, leaf);
      Hash32 digest = commit_signing_digest(cert.view, cert.seq, h_pp,
                                            att.attestor, a_root);
      if (!verify(config.nodes[att.attestor].public_key, digest,
                  att.commit_sig)) {
        return false;
      }
    }
    return attestors.size() > f;
  } catch (...) {
    return false;
  }
}

bool verify_response(const InferenceRequest& request,
                     const InferenceResponse& response,
                     const ClusterConfig& config) {
  try {
    if (response.request_id != request.request_id) return false;
    if (response.kind == InferenceResponse::Kind::success) {
      if (!response.certificate) return false;
      if (response.results.empty()) return false;
      for (size_t i = 1; i < response.results.size(); i++) {
        if (response.results[i - 1].node_index >=
            response.results[i].node_index) {
          return false;
        }
      }
      return verify_cert(request, response.results, *response.certificate,
                         config);
    }
    if (!response.failure) return false;
    return verify_failure(request, *response.failure, config);
  } catch (...) {
    return false;
  }
}

}  // namespace credo
