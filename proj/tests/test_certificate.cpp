// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "credo/certificate.hpp"
#include "credo/crypto.hpp"
#include "oracle_helpers.hpp"

using namespace credo;
using credo::testing::Rng;

namespace {

// A full honest slot, assembled by hand from the protocol primitives: four
// nodes, one certifiable request, one rejected request, whole-batch
// attestations for three providers and a single attestation for the fourth.
struct Scenario {
  Rng rng{909};
  std::vector<KeyPair> keys;
  ClusterConfig config;
  KeyPair client = KeyPair::generate();

  InferenceRequest req;       // op 0, certifiable
  InferenceRequest rejected;  // op 1, annotated rejected
  std::vector<OpEntry> ops;
  Hash32 h_ops{};
  uint64_t view = 0;
  uint64_t seq = 7;

  std::map<uint64_t, InferenceResult> results;       // per provider, op 0
  std::map<uint64_t, merkle::Tree> r_trees;          // per provider
  std::map<uint64_t, Hash32> r_roots;
  Signature pre_prepare_sig{};
  Hash32 h_pp{};
  std::map<uint64_t, Signature> prepare_sigs;        // backups
  std::vector<AttestLeafRef> manifest;
  std::map<uint64_t, merkle::Tree> a_trees;          // per committer
  std::map<uint64_t, Signature> commit_sigs;

  Scenario() {
    for (int i = 0; i < 4; i++) keys.push_back(KeyPair::generate());
    std::sort(keys.begin(), keys.end(),
              [](const KeyPair& a, const KeyPair& b) {
                return a.public_key() < b.public_key();
              });
    for (uint64_t i = 0; i < 4; i++) {
      NodeIdentity id;
      id.public_key = keys[i].public_key();
      id.endpoint = "sim://" + std::to_string(i);
      id.index = i;
      config.nodes.push_back(id);
    }
    config.f = 1;

    req = make_signed_request(client, rng.bytes(8), "g", rng.vec(3, -1, 1),
                              std::nullopt);
    rejected = make_signed_request(client, rng.bytes(8), "g",
                                   rng.vec(3, -1, 1), std::nullopt);
    ops.resize(2);
    ops[0].kind = OpKind::request_inf;
    ops[0].request = req;
    ops[0].version = 1;
    ops[1].kind = OpKind::request_inf;
    ops[1].request = rejected;
    ops[1].version = 0;
    ops[1].status = OpStatus::rejected;
    ops[1].reason = "no active version";
    h_ops = hash_ops(ops);

    for (uint64_t i = 0; i < 4; i++) {
      InferenceResult r;
      r.request_id = req.request_id;
      r.node_index = i;
      r.group_id = "g";
      r.group_version = 1;
      r.output = {0.60 + 0.001 * static_cast<double>(i), 0.40};
      results[i] = r;
      std::map<uint64_t, InferenceResult> own{{0, r}};
      r_trees.emplace(i, build_result_tree(view, seq, ops, own));
      r_roots[i] = r_trees.at(i).root();
    }

    pre_prepare_sig = keys[0].sign(
        pre_prepare_signing_digest(view, seq, h_ops, r_roots[0]));
    h_pp = pre_prepare_hash_of(view, seq, h_ops, r_roots[0], pre_prepare_sig);
    for (uint64_t i = 1; i < 4; i++) {
      prepare_sigs[i] = keys[i].sign(
          prepare_signing_digest(view, seq, h_pp, i, r_roots[i]));
    }

    // Every committer judged providers 0-2 across the whole batch and
    // provider 3 per-request; the rejected op carries a failure leaf.
    for (uint64_t p = 0; p < 3; p++) {
      AttestLeafRef ref;
      ref.kind = AttestLeafRef::Kind::whole_batch;
      ref.node = p;
      manifest.push_back(ref);
    }
    AttestLeafRef single;
    single.kind = AttestLeafRef::Kind::single;
    single.node = 3;
    single.op_index = 0;
    manifest.push_back(single);
    AttestLeafRef fail_ref;
    fail_ref.kind = AttestLeafRef::Kind::failure;
    fail_ref.op_index = 1;
    manifest.push_back(fail_ref);

    std::vector<Bytes> leaves;
    for (uint64_t p = 0; p < 3; p++) {
      leaves.push_back(whole_batch_leaf(r_roots[p]));
    }
    leaves.push_back(single_attest_leaf(req, results[3]));
    leaves.push_back(failure_leaf(failure_record_for(ops[1])));
    for (uint64_t c = 0; c < 4; c++) {
      a_trees.emplace(c, merkle::Tree::build(leaves));
      commit_sigs[c] = keys[c].sign(commit_signing_digest(
          view, seq, h_pp, c, a_trees.at(c).root()));
    }
  }

  // Leaf index of provider p's covering leaf in the shared manifest.
  size_t attest_index(uint64_t p) const { return static_cast<size_t>(p); }

  InferenceCertificate certificate(
      const std::vector<uint64_t>& providers,
      const std::vector<uint64_t>& attestors) const {
    InferenceCertificate cert;
    cert.view = view;
    cert.seq = seq;
    cert.h_ops = h_ops;
    cert.primary_r_root = r_roots.at(0);
    cert.pre_prepare_sig = pre_prepare_sig;
    for (uint64_t p : providers) {
      if (p != 0) cert.sigs[p].order_sig = prepare_sigs.at(p);
      cert.result_paths[p] = r_trees.at(p).auth_path(0);
      for (uint64_t c : attestors) {
        CertAttestation att;
        att.attestor = c;
        att.kind = p == 3 ? AttestLeafRef::Kind::single
                          : AttestLeafRef::Kind::whole_batch;
        att.path = a_trees.at(c).auth_path(attest_index(p));
        cert.attestations[p].push_back(att);
        cert.sigs[c].commit_sig = commit_sigs.at(c);
      }
    }
    return cert;
  }

  std::vector<InferenceResult> result_vec(
      const std::vector<uint64_t>& providers) const {
    std::vector<InferenceResult> out;
    for (uint64_t p : providers) out.push_back(results.at(p));
    return out;
  }

  FailureCertificate failure_certificate(
      const std::vector<uint64_t>& attestors) const {
    FailureCertificate cert;
    cert.view = view;
    cert.seq = seq;
    cert.h_ops = h_ops;
    cert.primary_r_root = r_roots.at(0);
    cert.pre_prepare_sig = pre_prepare_sig;
    cert.record = failure_record_for(ops[1]);
    for (uint64_t c : attestors) {
      FailureCertificate::Attest att;
      att.attestor = c;
      att.path = a_trees.at(c).auth_path(4);
      att.commit_sig = commit_sigs.at(c);
      cert.attests.push_back(att);
    }
    return cert;
  }
};

}  // namespace

TEST_CASE("an honest certificate verifies, with any quorum subset") {
  Scenario s;
  CHECK(verify_cert(s.req, s.result_vec({0, 1, 2, 3}),
                    s.certificate({0, 1, 2, 3}, {0, 1, 2, 3}), s.config));
  // N - f = 3 results and f + 1 = 2 attestors are the floor.
  CHECK(verify_cert(s.req, s.result_vec({0, 1, 3}),
                    s.certificate({0, 1, 3}, {1, 2}), s.config));
  CHECK(verify_cert(s.req, s.result_vec({1, 2, 3}),
                    s.certificate({1, 2, 3}, {0, 3}), s.config));
}

TEST_CASE("too few results or attestors fails") {
  Scenario s;
  CHECK_FALSE(verify_cert(s.req, s.result_vec({0, 1}),
                          s.certificate({0, 1}, {0, 1, 2}), s.config));
  CHECK_FALSE(verify_cert(s.req, s.result_vec({0, 1, 2}),
                          s.certificate({0, 1, 2}, {2}), s.config));
}

TEST_CASE("the certificate binds the exact request and results") {
  Scenario s;
  auto cert = s.certificate({0, 1, 2}, {0, 1});

  // A different request with the same shape.
  InferenceRequest other = make_signed_request(
      s.client, s.rng.bytes(8), "g", s.req.input, std::nullopt);
  CHECK_FALSE(verify_cert(other, s.result_vec({0, 1, 2}), cert, s.config));

  // A perturbed output no longer matches the provider's result tree.
  auto results = s.result_vec({0, 1, 2});
  results[1].output[0] += 1e-9;
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  // A result claiming the wrong node.
  results = s.result_vec({0, 1, 2});
  results[2].node_index = 3;
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  // Duplicate providers cannot stand in for a quorum.
  results = s.result_vec({0, 1, 1});
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));
}

TEST_CASE("every signature in the certificate is checked") {
  Scenario s;
  auto results = s.result_vec({0, 1, 2});

  auto cert = s.certificate({0, 1, 2}, {0, 1});
  cert.pre_prepare_sig[5] ^= 0x01;
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  cert = s.certificate({0, 1, 2}, {0, 1});
  (*cert.sigs[1].order_sig)[0] ^= 0x01;
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  cert = s.certificate({0, 1, 2}, {0, 1});
  (*cert.sigs[0].commit_sig)[0] ^= 0x01;
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));
}

TEST_CASE("paths into other trees are rejected") {
  Scenario s;
  auto results = s.result_vec({0, 1, 2});

  // Paths are auxiliary data: a path borrowed from another provider's
  // tree still verifies when the sibling leaves happen to be identical,
  // because it reconstructs the signed root. Soundness rests on the root.
  auto cert = s.certificate({0, 1, 2}, {0, 1});
  cert.result_paths[1] = s.r_trees.at(2).auth_path(0);
  CHECK(verify_cert(s.req, results, cert, s.config));

  // A path aimed at the wrong leaf position reconstructs a different
  // root, which no signature covers.
  cert.result_paths[1] = s.r_trees.at(1).auth_path(1);
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  // An attestation path aimed at the wrong leaf.
  cert = s.certificate({0, 1, 2}, {0, 1});
  cert.attestations[0][0].path = s.a_trees.at(0).auth_path(1);
  CHECK_FALSE(verify_cert(s.req, results, cert, s.config));

  // Claiming whole-batch coverage with a single-attest path.
  cert = s.certificate({0, 1, 2, 3}, {0, 1});
  cert.attestations[3][0].kind = AttestLeafRef::Kind::whole_batch;
  CHECK_FALSE(verify_cert(s.req, s.result_vec({0, 1, 2, 3}), cert,
                          s.config));
}

TEST_CASE("attestor multiplicity cannot be faked") {
  Scenario s;
  auto cert = s.certificate({0, 1, 2}, {0, 1});
  // The same attestor listed twice is one attestor.
  cert.attestations[0][1] = cert.attestations[0][0];
  CHECK_FALSE(
      verify_cert(s.req, s.result_vec({0, 1, 2}), cert, s.config));
}

TEST_CASE("certificates round-trip and survive re-encoding") {
  Scenario s;
  auto cert = s.certificate({0, 1, 2, 3}, {1, 2});
  Encoder e;
  cert.encode(e);
  Bytes wire = std::move(e).take();
  Decoder d(wire);
  InferenceCertificate back = InferenceCertificate::decode(d);
  d.expect_done();
  CHECK(back == cert);
  CHECK(verify_cert(s.req, s.result_vec({0, 1, 2, 3}), back, s.config));
}

TEST_CASE("mutated certificate bytes never verify") {
  Scenario s;
  auto cert = s.certificate({0, 1, 2}, {2, 3});
  auto results = s.result_vec({0, 1, 2});
  REQUIRE(verify_cert(s.req, results, cert, s.config));

  Encoder e;
  cert.encode(e);
  Bytes wire = std::move(e).take();

  Rng rng(515151);
  int rejected = 0;
  const int trials = 500;
  for (int t = 0; t < trials; t++) {
    Bytes mutated = wire;
    size_t pos = rng.below(mutated.size());
    uint8_t delta = static_cast<uint8_t>(1 + rng.below(255));
    mutated[pos] = static_cast<uint8_t>(mutated[pos] ^ delta);
    try {
      Decoder d(mutated);
      InferenceCertificate c = InferenceCertificate::decode(d);
      d.expect_done();
      if (!verify_cert(s.req, results, c, s.config)) rejected++;
    } catch (const CodecError&) {
      rejected++;
    }
  }
  CHECK(rejected == trials);
}

TEST_CASE("failure certificates need more than f attestors on the record") {
  Scenario s;
  CHECK(verify_failure(s.rejected, s.failure_certificate({0, 2}), s.config));
  CHECK(verify_failure(s.rejected, s.failure_certificate({0, 1, 2, 3}),
                       s.config));
  CHECK_FALSE(verify_failure(s.rejected, s.failure_certificate({1}),
                             s.config));

  // The record must name the request being verified.
  CHECK_FALSE(verify_failure(s.req, s.failure_certificate({0, 2}),
                             s.config));

  auto cert = s.failure_certificate({0, 2});
  cert.record.reason = "different reason";
  CHECK_FALSE(verify_failure(s.rejected, cert, s.config));

  cert = s.failure_certificate({0, 2});
  cert.attests[1] = cert.attests[0];
  CHECK_FALSE(verify_failure(s.rejected, cert, s.config));

  cert = s.failure_certificate({0, 2});
  cert.attests[0].commit_sig[7] ^= 0x01;
  CHECK_FALSE(verify_failure(s.rejected, cert, s.config));
}

TEST_CASE("response envelopes verify as a whole") {
  Scenario s;

  InferenceResponse ok;
  ok.kind = InferenceResponse::Kind::success;
  ok.request_id = s.req.request_id;
  ok.results = s.result_vec({0, 1, 2, 3});
  ok.certificate = s.certificate({0, 1, 2, 3}, {0, 1, 2, 3});
  ok.distance.metric = distance::Metric::euclidean;
  ok.distance.default_epsilon = 0.25;
  ok.effective_epsilon = 0.25;
  CHECK(verify_response(s.req, ok, s.config));
  CHECK_FALSE(verify_response(s.rejected, ok, s.config));

  InferenceResponse out_of_order = ok;
  std::swap(out_of_order.results[0], out_of_order.results[1]);
  CHECK_FALSE(verify_response(s.req, out_of_order, s.config));

  InferenceResponse fail;
  fail.kind = InferenceResponse::Kind::failure;
  fail.request_id = s.rejected.request_id;
  fail.failure = s.failure_certificate({1, 3});
  CHECK(verify_response(s.rejected, fail, s.config));
  CHECK_FALSE(verify_response(s.req, fail, s.config));

  Encoder e;
  ok.encode(e);
  Bytes wire = std::move(e).take();
  Decoder d(wire);
  InferenceResponse back = InferenceResponse::decode(d);
  d.expect_done();
  CHECK(back == ok);
}
