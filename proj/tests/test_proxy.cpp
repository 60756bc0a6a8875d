// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "credo/crypto.hpp"
#include "credo/proxy.hpp"
#include "credo/state.hpp"
#include "oracle_helpers.hpp"

using namespace credo;
using credo::testing::Rng;

namespace {

// An honestly ordered slot, assembled by hand: four nodes, one certifiable
// request, one rejected request, whole-batch attestations for providers
// 0-2 and a single attestation for provider 3, all four committers
// carrying the same manifest.
struct SlotScenario {
  Rng rng;
  std::vector<KeyPair> keys;
  ClusterConfig config;
  KeyPair client = KeyPair::generate();

  InferenceRequest req;       // op 0, certifiable
  InferenceRequest rejected;  // op 1, annotated rejected
  OrderedSlot slot;

  std::map<uint64_t, merkle::Tree> a_trees;  // per committer

  explicit SlotScenario(uint64_t seq = 7, double base_output = 0.60,
                        uint64_t seed = 909)
      : rng(seed) {
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
    rebuild(seq, base_output);
  }

  // Recomputes every piece of slot evidence for the same two requests at a
  // new sequence number, as a faulty primary re-ordering a duplicate would.
  void rebuild(uint64_t seq, double base_output) {
    slot = OrderedSlot{};
    a_trees.clear();
    slot.view = 0;
    slot.seq = seq;
    slot.primary = 0;
    slot.ops.resize(2);
    slot.ops[0].kind = OpKind::request_inf;
    slot.ops[0].request = req;
    slot.ops[0].version = 1;
    slot.ops[1].kind = OpKind::request_inf;
    slot.ops[1].request = rejected;
    slot.ops[1].version = 0;
    slot.ops[1].status = OpStatus::rejected;
    slot.ops[1].reason = "no active version";
    slot.h_ops = hash_ops(slot.ops);

    for (uint64_t i = 0; i < 4; i++) {
      InferenceResult r;
      r.request_id = req.request_id;
      r.node_index = i;
      r.group_id = "g";
      r.group_version = 1;
      r.output = {base_output + 0.001 * static_cast<double>(i), 0.40};
      slot.results_by_op[0][i] = r;
      std::map<uint64_t, InferenceResult> own{{0, r}};
      slot.r_roots[i] =
          build_result_tree(slot.view, slot.seq, slot.ops, own).root();
    }

    slot.pre_prepare_sig = keys[0].sign(pre_prepare_signing_digest(
        slot.view, slot.seq, slot.h_ops, slot.r_roots[0]));
    slot.primary_r_root = slot.r_roots[0];
    slot.h_pp = pre_prepare_hash_of(slot.view, slot.seq, slot.h_ops,
                                    slot.r_roots[0], slot.pre_prepare_sig);
    for (uint64_t i = 1; i < 4; i++) {
      slot.prepare_sigs[i] = keys[i].sign(prepare_signing_digest(
          slot.view, slot.seq, slot.h_pp, i, slot.r_roots[i]));
    }

    std::vector<AttestLeafRef> manifest;
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
    for (uint64_t c = 0; c < 4; c++) set_manifest(c, manifest);

    OpAttestOutcome outcome;
    outcome.satisfied = true;
    outcome.quorum = {0, 1, 2, 3};
    outcome.diameter = 0.003;
    outcome.epsilon = 0.05;
    outcome.descriptor.metric = distance::Metric::euclidean;
    outcome.descriptor.default_epsilon = 0.05;
    slot.outcomes[0] = outcome;
  }

  // Rebuilds committer c's attestation tree and commit for a manifest.
  // Entries that reference evidence the slot does not carry make the
  // manifest unusable for assembly, exactly as a lying committer's would.
  void set_manifest(uint64_t c, const std::vector<AttestLeafRef>& manifest) {
    std::vector<Bytes> leaves;
    for (const AttestLeafRef& ref : manifest) {
      auto leaf = attest_leaf_bytes(ref, slot.ops, slot.r_roots,
                                    slot.results_by_op);
      leaves.push_back(leaf ? std::move(*leaf) : Bytes{0x00});
    }
    a_trees.erase(c);
    a_trees.emplace(c, merkle::Tree::build(leaves));
    CommitMsg m;
    m.view = slot.view;
    m.seq = slot.seq;
    m.pre_prepare_hash = slot.h_pp;
    m.node = c;
    m.a_root = a_trees.at(c).root();
    m.manifest = manifest;
    m.sig = keys[c].sign(m.signing_digest());
    slot.commits[c] = m;
  }
};

GroupDefinition tiny_definition() {
  GroupDefinition def;
  ModelDescriptor m;
  m.model_url = "mem://g/1/0";
  m.input_dim = 3;
  m.output_dim = 2;
  def.models.push_back(m);
  def.distance.metric = distance::Metric::euclidean;
  def.distance.default_epsilon = 0.05;
  return def;
}

std::string temp_path(const std::string& stem) {
  auto dir = std::filesystem::temp_directory_path();
  return (dir / stem).string();
}

}  // namespace

// ---- assemble_response ----

TEST_CASE("a fully covered request assembles into a verifiable success") {
  SlotScenario s;
  auto resp = assemble_response(s.slot, 0, s.config);
  REQUIRE(resp.has_value());
  CHECK(resp->kind == InferenceResponse::Kind::success);
  REQUIRE(resp->results.size() == 4);
  for (uint64_t i = 0; i < 4; i++) CHECK(resp->results[i].node_index == i);
  CHECK(resp->effective_epsilon == 0.05);
  CHECK(resp->distance.metric == distance::Metric::euclidean);
  CHECK(verify_response(s.req, *resp, s.config));
}

TEST_CASE("a rejected op assembles into a verifiable failure") {
  SlotScenario s;
  auto resp = assemble_response(s.slot, 1, s.config);
  REQUIRE(resp.has_value());
  CHECK(resp->kind == InferenceResponse::Kind::failure);
  REQUIRE(resp->failure.has_value());
  CHECK(resp->failure->record.reason == "no active version");
  CHECK(verify_response(s.rejected, *resp, s.config));
}

TEST_CASE("assembly drops providers missing ordering evidence") {
  SlotScenario s;
  // Provider 3's PREPARE never arrived: it cannot be covered, but N - f
  // others can, so the response still certifies.
  s.slot.prepare_sigs.erase(3);
  auto resp = assemble_response(s.slot, 0, s.config);
  REQUIRE(resp.has_value());
  CHECK(resp->results.size() == 3);
  CHECK(verify_response(s.req, *resp, s.config));

  // A second missing provider leaves 2 < N - f covered results and the op
  // has no failure leaf to fall back on.
  s.slot.r_roots.erase(2);
  CHECK_FALSE(assemble_response(s.slot, 0, s.config).has_value());
}

TEST_CASE("assembly accepts mixed committer manifests") {
  SlotScenario s;
  // Committers 2 and 3 judged only the whole-batch providers; provider 3's
  // single attestation and the failure leaf live with committers 0 and 1.
  std::vector<AttestLeafRef> narrow;
  for (uint64_t p = 0; p < 3; p++) {
    AttestLeafRef ref;
    ref.kind = AttestLeafRef::Kind::whole_batch;
    ref.node = p;
    narrow.push_back(ref);
  }
  s.set_manifest(2, narrow);
  s.set_manifest(3, narrow);

  auto resp = assemble_response(s.slot, 0, s.config);
  REQUIRE(resp.has_value());
  CHECK(resp->results.size() == 4);
  CHECK(verify_response(s.req, *resp, s.config));

  // The failure certificate for op 1 leans on committers 0 and 1 alone.
  auto fail = assemble_response(s.slot, 1, s.config);
  REQUIRE(fail.has_value());
  CHECK(verify_response(s.rejected, *fail, s.config));
}

TEST_CASE("a provider with too few attestors is dropped") {
  SlotScenario s;
  // Three committers never judged provider 3: one attestor is not > f.
  std::vector<AttestLeafRef> narrow;
  for (uint64_t p = 0; p < 3; p++) {
    AttestLeafRef ref;
    ref.kind = AttestLeafRef::Kind::whole_batch;
    ref.node = p;
    narrow.push_back(ref);
  }
  AttestLeafRef fail_ref;
  fail_ref.kind = AttestLeafRef::Kind::failure;
  fail_ref.op_index = 1;
  narrow.push_back(fail_ref);
  for (uint64_t c = 1; c < 4; c++) s.set_manifest(c, narrow);

  auto resp = assemble_response(s.slot, 0, s.config);
  REQUIRE(resp.has_value());
  CHECK(resp->results.size() == 3);
  for (const InferenceResult& r : resp->results) CHECK(r.node_index != 3);
  CHECK(verify_response(s.req, *resp, s.config));
}

TEST_CASE("too few failure attestors yields no response") {
  SlotScenario s;
  // Only committer 0 kept the failure leaf for op 1.
  std::vector<AttestLeafRef> narrow;
  for (uint64_t p = 0; p < 3; p++) {
    AttestLeafRef ref;
    ref.kind = AttestLeafRef::Kind::whole_batch;
    ref.node = p;
    narrow.push_back(ref);
  }
  for (uint64_t c = 1; c < 4; c++) s.set_manifest(c, narrow);
  CHECK_FALSE(assemble_response(s.slot, 1, s.config).has_value());
}

TEST_CASE("a manifest naming unavailable evidence sidelines its committer") {
  SlotScenario s;
  // Committers 2 and 3 claim a single attestation for the rejected op,
  // which has no results; their trees cannot be rebuilt from the slot, so
  // neither contributes anything.
  std::vector<AttestLeafRef> bogus = s.slot.commits.at(0).manifest;
  AttestLeafRef phantom;
  phantom.kind = AttestLeafRef::Kind::single;
  phantom.node = 0;
  phantom.op_index = 1;
  bogus.push_back(phantom);
  s.set_manifest(2, bogus);
  s.set_manifest(3, bogus);

  auto resp = assemble_response(s.slot, 0, s.config);
  REQUIRE(resp.has_value());
  REQUIRE(resp->certificate.has_value());
  for (const auto& [p, atts] : resp->certificate->attestations) {
    for (const CertAttestation& att : atts) CHECK(att.attestor < 2);
  }
  CHECK(verify_response(s.req, *resp, s.config));

  // With three committers sidelined only one attestor remains, below the
  // > f bar for every provider.
  s.set_manifest(1, bogus);
  CHECK_FALSE(assemble_response(s.slot, 0, s.config).has_value());
  CHECK_FALSE(assemble_response(s.slot, 1, s.config).has_value());
}

TEST_CASE("assembly bounds-checks the op index") {
  SlotScenario s;
  CHECK_FALSE(assemble_response(s.slot, 2, s.config).has_value());
  CHECK_FALSE(assemble_response(s.slot, 999, s.config).has_value());
}

// ---- ProxyCore ----

TEST_CASE("the first assembled response per request wins") {
  SlotScenario s;
  ProxyCore proxy(s.config, nullptr, {});
  proxy.on_ordered(s.slot);
  auto first = proxy.response_for(s.req.request_id);
  REQUIRE(first.has_value());
  REQUIRE(first->certificate.has_value());
  CHECK(first->certificate->seq == 7);
  // Both the certified op and the rejected op cached a response.
  CHECK(proxy.cached_responses() == 2);
  CHECK(proxy.response_for(s.rejected.request_id).has_value());

  // The same requests re-ordered at a later slot (duplicates a faulty
  // primary slipped in) must not displace the cached certificates.
  s.rebuild(11, 0.80);
  proxy.on_ordered(s.slot);
  CHECK(proxy.cached_responses() == 2);
  auto still = proxy.response_for(s.req.request_id);
  REQUIRE(still.has_value());
  CHECK(still->certificate->seq == 7);
  CHECK(still->results[0].output[0] == doctest::Approx(0.60));
}

TEST_CASE("group ops ack and release the in-flight latch") {
  SlotScenario s;
  KeyPair owner = KeyPair::generate();
  GroupOp define = make_signed_group_op(owner, s.rng.bytes(8),
                                        OpKind::define_group, "g",
                                        tiny_definition());
  GroupOp activate = make_signed_group_op(owner, s.rng.bytes(8),
                                          OpKind::activate_group, "g",
                                          std::nullopt);
  GroupOp other = make_signed_group_op(owner, s.rng.bytes(8),
                                       OpKind::define_group, "h",
                                       tiny_definition());

  ProxyCore proxy(s.config, nullptr, {});
  CHECK_FALSE(proxy.admit_group_op(define).has_value());
  // Retrying the identical op is not a second update.
  CHECK_FALSE(proxy.admit_group_op(define).has_value());
  // A different op for the same group is.
  auto refused = proxy.admit_group_op(activate);
  REQUIRE(refused.has_value());
  CHECK(*refused == "group update already in flight");
  // Another group is unaffected.
  CHECK_FALSE(proxy.admit_group_op(other).has_value());

  OrderedSlot slot;
  slot.seq = 3;
  slot.ops.resize(1);
  slot.ops[0].kind = OpKind::define_group;
  slot.ops[0].group_op = define;
  slot.ops[0].version = 1;
  proxy.on_ordered(slot);

  auto ack = proxy.ack_for(define.op_id());
  REQUIRE(ack.has_value());
  CHECK(ack->group_id == "g");
  CHECK(ack->kind == OpKind::define_group);
  CHECK(ack->version == 1);
  CHECK(ack->status == OpStatus::ok);
  CHECK(ack->seq == 3);

  // Ordering cleared the latch; the next update is admitted.
  CHECK_FALSE(proxy.admit_group_op(activate).has_value());
}

TEST_CASE("handle_frame serves the client RPC surface") {
  SlotScenario s;
  StateMachine sm;
  KeyPair owner = KeyPair::generate();
  GroupOp define = make_signed_group_op(owner, s.rng.bytes(8),
                                        OpKind::define_group, "g",
                                        tiny_definition());
  GroupOp activate = make_signed_group_op(owner, s.rng.bytes(8),
                                          OpKind::activate_group, "g",
                                          std::nullopt);
  std::vector<OpEntry> lifecycle(2);
  lifecycle[0].kind = OpKind::define_group;
  lifecycle[0].group_op = define;
  lifecycle[1].kind = OpKind::activate_group;
  lifecycle[1].group_op = activate;
  sm.annotate_batch(lifecycle);
  REQUIRE(lifecycle[0].status == OpStatus::ok);
  REQUIRE(lifecycle[1].status == OpStatus::ok);

  size_t requests_seen = 0;
  size_t ops_seen = 0;
  ProxyCore::Hooks hooks;
  hooks.submit_request = [&](const InferenceRequest&) { requests_seen++; };
  hooks.submit_group_op = [&](const GroupOp&) { ops_seen++; };
  ProxyCore proxy(s.config, &sm, hooks);

  // Submit: forwarded once, reply says "not yet".
  auto reply = proxy.handle_frame(encode_infer_submit(s.req));
  REQUIRE(reply.has_value());
  auto parsed = parse_infer_reply(*reply);
  REQUIRE(parsed.has_value());
  CHECK_FALSE(parsed->has_value());
  CHECK(requests_seen == 1);

  // Tampered request: dropped without forwarding.
  InferenceRequest bad = s.req;
  bad.client_sig[0] ^= 0x01;
  CHECK_FALSE(proxy.handle_frame(encode_infer_submit(bad)).has_value());
  CHECK(requests_seen == 1);

  // Ordered: the poll now carries the verifiable response.
  proxy.on_ordered(s.slot);
  reply = proxy.handle_frame(encode_infer_poll(s.req.request_id));
  REQUIRE(reply.has_value());
  parsed = parse_infer_reply(*reply);
  REQUIRE(parsed.has_value());
  REQUIRE(parsed->has_value());
  CHECK(verify_response(s.req, **parsed, s.config));

  // A submit retry after ordering serves from cache without forwarding.
  reply = proxy.handle_frame(encode_infer_submit(s.req));
  REQUIRE(reply.has_value());
  CHECK(requests_seen == 1);
  CHECK(parse_infer_reply(*reply)->has_value());

  // Group op submit: forwarded, then a competing op is refused.
  GroupOp update = make_signed_group_op(owner, s.rng.bytes(8),
                                        OpKind::define_group, "g",
                                        tiny_definition());
  reply = proxy.handle_frame(encode_group_op_submit(update));
  REQUIRE(reply.has_value());
  auto ack = parse_group_op_reply(*reply);
  REQUIRE(ack.has_value());
  CHECK_FALSE(ack->has_value());
  CHECK(ops_seen == 1);

  GroupOp competing = make_signed_group_op(owner, s.rng.bytes(8),
                                           OpKind::retire_group, "g",
                                           std::nullopt);
  reply = proxy.handle_frame(encode_group_op_submit(competing));
  REQUIRE(reply.has_value());
  ack = parse_group_op_reply(*reply);
  REQUIRE(ack.has_value());
  REQUIRE(ack->has_value());
  CHECK((*ack)->status == OpStatus::rejected);
  CHECK((*ack)->reason == "group update already in flight");
  CHECK(ops_seen == 1);

  // Poll for an unordered op: "not yet".
  reply = proxy.handle_frame(encode_group_op_poll(update.op_id()));
  REQUIRE(reply.has_value());
  ack = parse_group_op_reply(*reply);
  REQUIRE(ack.has_value());
  CHECK_FALSE(ack->has_value());

  // Listing reflects the state machine's fold.
  reply = proxy.handle_frame(encode_list_groups());
  REQUIRE(reply.has_value());
  auto listing = parse_group_listing(*reply);
  REQUIRE(listing.has_value());
  REQUIRE(listing->size() == 1);
  CHECK((*listing)[0].group_id == "g");
  REQUIRE((*listing)[0].active.has_value());
  CHECK(*(*listing)[0].active == 1);
  REQUIRE((*listing)[0].versions.size() == 1);
  CHECK((*listing)[0].versions[0].version == 1);

  // Garbage and truncated frames are dropped.
  CHECK_FALSE(proxy.handle_frame(Bytes{0xde, 0xad, 0xbe, 0xef}).has_value());
  Bytes truncated = encode_infer_submit(s.req);
  truncated.resize(truncated.size() / 2);
  CHECK_FALSE(proxy.handle_frame(truncated).has_value());
}

TEST_CASE("ack and listing payloads round-trip") {
  GroupOpAck ack;
  ack.op_id.data[4] = 0x9c;
  ack.group_id = "vision-a";
  ack.kind = OpKind::activate_group;
  ack.version = 3;
  ack.status = OpStatus::rejected;
  ack.reason = "nothing to activate";
  ack.seq = 41;
  Encoder e;
  ack.encode(e);
  Bytes b = std::move(e).take();
  Decoder d(ByteView(b.data(), b.size()));
  CHECK(GroupOpAck::decode(d) == ack);

  GroupInfo info;
  info.group_id = "vision-a";
  info.active = 2;
  ModelGroup g;
  g.group_id = "vision-a";
  g.version = 2;
  g.models = tiny_definition().models;
  g.distance = tiny_definition().distance;
  info.versions.push_back(g);
  Encoder e2;
  info.encode(e2);
  Bytes b2 = std::move(e2).take();
  Decoder d2(ByteView(b2.data(), b2.size()));
  CHECK(GroupInfo::decode(d2) == info);
}

TEST_CASE("client parsers reject foreign frames") {
  SlotScenario s;
  CHECK_FALSE(parse_infer_reply(Bytes{1, 2, 3}).has_value());
  CHECK_FALSE(parse_group_op_reply(Bytes{1, 2, 3}).has_value());
  CHECK_FALSE(parse_group_listing(Bytes{1, 2, 3}).has_value());
  // A well-formed frame of the wrong type is not a reply either.
  Bytes poll = encode_infer_poll(s.req.request_id);
  CHECK_FALSE(parse_infer_reply(poll).has_value());
  CHECK_FALSE(parse_group_op_reply(poll).has_value());
  CHECK_FALSE(parse_group_listing(poll).has_value());
}

// ---- discovery ----

TEST_CASE("discovery files round-trip through disk") {
  SlotScenario s;
  KeyPair discovery = KeyPair::generate();
  std::string path = temp_path("credo-discovery-roundtrip.json");
  write_discovery_file(path, s.config, discovery);

  auto loaded = load_discovery_file(path, discovery.public_key());
  REQUIRE(loaded.has_value());
  CHECK(*loaded == s.config);
  std::remove(path.c_str());
}

TEST_CASE("discovery loading is total over hostile files") {
  SlotScenario s;
  KeyPair discovery = KeyPair::generate();
  KeyPair imposter = KeyPair::generate();
  std::string path = temp_path("credo-discovery-hostile.json");
  write_discovery_file(path, s.config, discovery);

  // Wrong trust anchor.
  CHECK_FALSE(load_discovery_file(path, imposter.public_key()).has_value());

  // Flip one nibble inside the signed cluster encoding.
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  in.close();
  std::string text = ss.str();
  size_t pos = text.find("\"cluster\": \"");
  REQUIRE(pos != std::string::npos);
  pos += 12;
  text[pos] = text[pos] == '0' ? '1' : '0';
  std::ofstream(path, std::ios::trunc) << text;
  CHECK_FALSE(load_discovery_file(path, discovery.public_key()).has_value());

  // Unparseable JSON.
  std::ofstream(path, std::ios::trunc) << "{ not json";
  CHECK_FALSE(load_discovery_file(path, discovery.public_key()).has_value());

  // Missing file.
  std::remove(path.c_str());
  CHECK_FALSE(load_discovery_file(path, discovery.public_key()).has_value());
}

TEST_CASE("discovery rejects configs that fail their own invariants") {
  SlotScenario s;
  KeyPair discovery = KeyPair::generate();
  ClusterConfig bad = s.config;
  bad.f = 2;  // 4 nodes cannot tolerate f = 2
  REQUIRE(bad.validate().has_value());
  std::string path = temp_path("credo-discovery-invalid.json");
  write_discovery_file(path, bad, discovery);
  // The signature is genuine; the config is still refused.
  CHECK_FALSE(load_discovery_file(path, discovery.public_key()).has_value());
  std::remove(path.c_str());
}
