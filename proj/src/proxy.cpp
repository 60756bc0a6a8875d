// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/proxy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "credo/codec.hpp"
#include "credo/merkle.hpp"

namespace credo {

namespace {

// One committer's attestation tree, rebuilt from its manifest exactly as
// the coordinator validated it.
struct CommitterTree {
  uint64_t node = 0;
  const CommitMsg* commit = nullptr;
  std::vector<AttestLeafRef> manifest;
  merkle::Tree tree;
};

std::vector<CommitterTree> rebuild_committer_trees(const OrderedSlot& slot) {
  std::vector<CommitterTree> out;
  for (const auto& [c, commit] : slot.commits) {
    std::vector<Bytes> leaves;
    leaves.reserve(commit.manifest.size());
    bool complete = true;
    for (const AttestLeafRef& ref : commit.manifest) {
      auto leaf = attest_leaf_bytes(ref, slot.ops, slot.r_roots,
                                    slot.results_by_op);
      if (!leaf) {
        complete = false;
        break;
      }
      leaves.push_back(std::move(*leaf));
    }
    if (!complete || leaves.empty()) continue;
    out.push_back(
        CommitterTree{c, &commit, commit.manifest, merkle::Tree::build(leaves)});
  }
  return out;
}

// Index of the manifest entry covering (op k, provider p): a whole-batch
// leaf for p, else a single leaf for exactly (k, p).
std::optional<std::pair<size_t, AttestLeafRef::Kind>> covering_index(
    const std::vector<AttestLeafRef>& manifest, size_t k, uint64_t p) {
  for (size_t i = 0; i < manifest.size(); i++) {
    const AttestLeafRef& ref = manifest[i];
    if (ref.kind == AttestLeafRef::Kind::whole_batch && ref.node == p) {
      return std::make_pair(i, ref.kind);
    }
    if (ref.kind == AttestLeafRef::Kind::single && ref.node == p &&
        ref.op_index == k) {
      return std::make_pair(i, ref.kind);
    }
  }
  return std::nullopt;
}

std::optional<size_t> failure_index(const std::vector<AttestLeafRef>& manifest,
                                    size_t k) {
  for (size_t i = 0; i < manifest.size(); i++) {
    if (manifest[i].kind == AttestLeafRef::Kind::failure &&
        manifest[i].op_index == k) {
      return i;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<InferenceResponse> assemble_response(
    const OrderedSlot& slot, size_t op_index, const ClusterConfig& config) {
  if (op_index >= slot.ops.size()) return std::nullopt;
  const OpEntry& op = slot.ops[op_index];
  if (op.kind != OpKind::request_inf || !op.request) return std::nullopt;
  const InferenceRequest& req = *op.request;
  const uint64_t n = config.n();
  const uint64_t f = config.f;

  std::vector<CommitterTree> committers = rebuild_committer_trees(slot);

  InferenceResponse resp;
  resp.request_id = req.request_id;
  if (auto oc = slot.outcomes.find(op_index); oc != slot.outcomes.end()) {
    resp.distance = oc->second.descriptor;
    resp.effective_epsilon = oc->second.epsilon;
  }

  if (op.status == OpStatus::ok) {
    auto results_it = slot.results_by_op.find(op_index);
    if (results_it != slot.results_by_op.end()) {
      InferenceCertificate cert;
      cert.view = slot.view;
      cert.seq = slot.seq;
      cert.h_ops = slot.h_ops;
      cert.primary_r_root = slot.primary_r_root;
      cert.pre_prepare_sig = slot.pre_prepare_sig;
      std::vector<InferenceResult> covered;

      for (const auto& [p, result] : results_it->second) {
        auto root_it = slot.r_roots.find(p);
        if (root_it == slot.r_roots.end()) continue;
        std::optional<Signature> order_sig;
        if (p != slot.primary) {
          auto sig_it = slot.prepare_sigs.find(p);
          if (sig_it == slot.prepare_sigs.end()) continue;
          order_sig = sig_it->second;
        }

        std::vector<CertAttestation> atts;
        for (const CommitterTree& ct : committers) {
          auto cover = covering_index(ct.manifest, op_index, p);
          if (!cover) continue;
          CertAttestation att;
          att.attestor = ct.node;
          att.kind = cover->second;
          att.path = ct.tree.auth_path(cover->first);
          atts.push_back(std::move(att));
        }
        if (atts.size() <= f) continue;

        // The provider's full result tree, for the auth path at this op.
        std::map<uint64_t, InferenceResult> own;
        for (const auto& [k2, per_node] : slot.results_by_op) {
          if (auto it = per_node.find(p); it != per_node.end()) {
            own.emplace(k2, it->second);
          }
        }
        merkle::Tree r_tree =
            build_result_tree(slot.view, slot.seq, slot.ops, own);
        if (r_tree.root() != root_it->second) continue;

        cert.result_paths[p] = r_tree.auth_path(op_index);
        if (order_sig) cert.sigs[p].order_sig = *order_sig;
        for (const CertAttestation& att : atts) {
          cert.sigs[att.attestor].commit_sig =
              slot.commits.at(att.attestor).sig;
        }
        cert.attestations[p] = std::move(atts);
        covered.push_back(result);
      }

      if (covered.size() >= n - f) {
        std::sort(covered.begin(), covered.end(),
                  [](const InferenceResult& a, const InferenceResult& b) {
                    return a.node_index < b.node_index;
                  });
        resp.kind = InferenceResponse::Kind::success;
        resp.results = std::move(covered);
        resp.certificate = std::move(cert);
        return resp;
      }
    }
  }

  // Certified failure: more than f committers carry this op's failure leaf.
  FailureCertificate fc;
  fc.view = slot.view;
  fc.seq = slot.seq;
  fc.h_ops = slot.h_ops;
  fc.primary_r_root = slot.primary_r_root;
  fc.pre_prepare_sig = slot.pre_prepare_sig;
  fc.record = failure_record_for(op);
  for (const CommitterTree& ct : committers) {
    auto idx = failure_index(ct.manifest, op_index);
    if (!idx) continue;
    FailureCertificate::Attest att;
    att.attestor = ct.node;
    att.path = ct.tree.auth_path(*idx);
    att.commit_sig = ct.commit->sig;
    fc.attests.push_back(std::move(att));
  }
  if (fc.attests.size() <= f) return std::nullopt;
  resp.kind = InferenceResponse::Kind::failure;
  resp.failure = std::move(fc);
  return resp;
}

// ---- GroupOpAck / GroupInfo codecs ----

void GroupOpAck::encode(Encoder& e) const {
  e.hash(op_id);
  e.str(group_id);
  e.u8(static_cast<uint8_t>(kind));
  e.u64(version);
  e.u8(static_cast<uint8_t>(status));
  e.str(reason);
  e.u64(seq);
}

GroupOpAck GroupOpAck::decode(Decoder& d) {
  GroupOpAck a;
  a.op_id = d.hash();
  a.group_id = d.str();
  a.kind = static_cast<OpKind>(d.u8());
  a.version = d.u64();
  a.status = static_cast<OpStatus>(d.u8());
  a.reason = d.str();
  a.seq = d.u64();
  return a;
}

void GroupInfo::encode(Encoder& e) const {
  e.str(group_id);
  e.u8(active ? 1 : 0);
  if (active) e.u64(*active);
  e.u32be(static_cast<uint32_t>(versions.size()));
  for (const ModelGroup& g : versions) g.encode(e);
}

GroupInfo GroupInfo::decode(Decoder& d) {
  GroupInfo g;
  g.group_id = d.str();
  if (d.u8() != 0) g.active = d.u64();
  uint32_t n = d.u32be();
  for (uint32_t i = 0; i < n; i++) g.versions.push_back(ModelGroup::decode(d));
  return g;
}

// ---- ProxyCore ----

void ProxyCore::on_ordered(const OrderedSlot& slot) {
  for (size_t k = 0; k < slot.ops.size(); k++) {
    const OpEntry& op = slot.ops[k];
    if (op.kind == OpKind::request_inf) {
      if (!op.request) continue;
      const Hash32& id = op.request->request_id;
      if (responses_.count(id)) continue;
      if (auto resp = assemble_response(slot, k, config_)) {
        responses_.emplace(id, std::move(*resp));
      }
      continue;
    }
    if (!op.group_op) continue;
    const GroupOp& g = *op.group_op;
    GroupOpAck ack;
    ack.op_id = g.op_id();
    ack.group_id = g.group_id;
    ack.kind = op.kind;
    ack.version = op.version;
    ack.status = op.status;
    ack.reason = op.reason;
    ack.seq = slot.seq;
    acks_.emplace(ack.op_id, ack);
    auto it = inflight_update_.find(g.group_id);
    if (it != inflight_update_.end() && it->second == ack.op_id) {
      inflight_update_.erase(it);
    }
  }
}

std::optional<std::string> ProxyCore::admit_group_op(const GroupOp& op) {
  const Hash32 id = op.op_id();
  auto it = inflight_update_.find(op.group_id);
  if (it != inflight_update_.end()) {
    if (it->second == id) return std::nullopt;  // retry of the same op
    return "group update already in flight";
  }
  inflight_update_.emplace(op.group_id, id);
  return std::nullopt;
}

std::optional<InferenceResponse> ProxyCore::response_for(
    const Hash32& request_id) const {
  auto it = responses_.find(request_id);
  if (it == responses_.end()) return std::nullopt;
  return it->second;
}

std::optional<GroupOpAck> ProxyCore::ack_for(const Hash32& op_id) const {
  auto it = acks_.find(op_id);
  if (it == acks_.end()) return std::nullopt;
  return it->second;
}

std::vector<GroupInfo> ProxyCore::list_groups() const {
  std::vector<GroupInfo> out;
  if (!state_) return out;
  // Listing covers every group any ordered op created, including ones with
  // no active version. active_groups() only names active ones, so walk the
  // union of both sources through group().
  std::vector<std::string> ids;
  for (const ModelGroup& g : state_->active_groups()) ids.push_back(g.group_id);
  for (const auto& [gid, id] : inflight_update_) {
    (void)id;
    ids.push_back(gid);
  }
  for (const auto& [id, ack] : acks_) {
    (void)id;
    ids.push_back(ack.group_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (const std::string& gid : ids) {
    const GroupVersions* gv = state_->group(gid);
    if (!gv) continue;
    GroupInfo info;
    info.group_id = gid;
    info.active = gv->active;
    for (const auto& [v, g] : gv->versions) {
      (void)v;
      info.versions.push_back(g);
    }
    out.push_back(std::move(info));
  }
  return out;
}

std::optional<Bytes> ProxyCore::handle_frame(ByteView frame) {
  try {
    Frame f = parse_frame(frame);
    Decoder d(ByteView(f.payload.data(), f.payload.size()));
    switch (f.type) {
      case MsgType::infer_submit: {
        InferenceRequest req = InferenceRequest::decode(d);
        d.expect_done();
        if (!verify_request(req)) return std::nullopt;
        if (!responses_.count(req.request_id) && hooks_.submit_request) {
          hooks_.submit_request(req);
        }
        Encoder e;
        auto resp = response_for(req.request_id);
        e.u8(resp ? 1 : 0);
        if (resp) resp->encode(e);
        return frame_message(MsgType::infer_reply, std::move(e).take());
      }
      case MsgType::infer_poll: {
        Hash32 id = d.hash();
        d.expect_done();
        Encoder e;
        auto resp = response_for(id);
        e.u8(resp ? 1 : 0);
        if (resp) resp->encode(e);
        return frame_message(MsgType::infer_reply, std::move(e).take());
      }
      case MsgType::group_op_submit: {
        GroupOp op = GroupOp::decode(d);
        d.expect_done();
        if (!verify_group_op(op)) return std::nullopt;
        Encoder e;
        if (auto ack = ack_for(op.op_id())) {
          e.u8(1);
          ack->encode(e);
          return frame_message(MsgType::group_op_reply, std::move(e).take());
        }
        if (auto refused = admit_group_op(op)) {
          GroupOpAck ack;
          ack.op_id = op.op_id();
          ack.group_id = op.group_id;
          ack.kind = op.kind;
          ack.status = OpStatus::rejected;
          ack.reason = *refused;
          e.u8(1);
          ack.encode(e);
          return frame_message(MsgType::group_op_reply, std::move(e).take());
        }
        if (hooks_.submit_group_op) hooks_.submit_group_op(op);
        e.u8(0);
        return frame_message(MsgType::group_op_reply, std::move(e).take());
      }
      case MsgType::group_op_poll: {
        Hash32 id = d.hash();
        d.expect_done();
        Encoder e;
        auto ack = ack_for(id);
        e.u8(ack ? 1 : 0);
        if (ack) ack->encode(e);
        return frame_message(MsgType::group_op_reply, std::move(e).take());
      }
      case MsgType::list_groups: {
        d.expect_done();
        Encoder e;
        auto groups = list_groups();
        e.u32be(static_cast<uint32_t>(groups.size()));
        for (const GroupInfo& g : groups) g.encode(e);
        return frame_message(MsgType::group_listing, std::move(e).take());
      }
      default:
        return std::nullopt;
    }
  } catch (const CodecError&) {
    return std::nullopt;
  }
}

// ---- Discovery ----

Hash32 discovery_signing_digest(const ClusterConfig& config) {
  Encoder e;
  config.encode(e);
  Bytes body = std::move(e).take();
  uint8_t tag = kDiscoverySigTag;
  return hash_concat({ByteView(&tag, 1), ByteView(body.data(), body.size())});
}

void write_discovery_file(const std::string& path, const ClusterConfig& config,
                          const KeyPair& discovery_key) {
  Encoder e;
  config.encode(e);
  Bytes body = std::move(e).take();
  Signature sig = discovery_key.sign(discovery_signing_digest(config));

  nlohmann::json j;
  j["cluster"] = to_hex(ByteView(body.data(), body.size()));
  j["signature"] = to_hex(ByteView(sig.data(), sig.size()));
  nlohmann::json nodes = nlohmann::json::array();
  for (const NodeIdentity& n : config.nodes) {
    nlohmann::json entry;
    entry["index"] = n.index;
    entry["endpoint"] = n.endpoint;
    entry["public_key"] = to_hex(ByteView(n.public_key.data(),
                                          n.public_key.size()));
    nodes.push_back(entry);
  }
  j["nodes"] = nodes;  // informational; the signed bytes are authoritative
  j["f"] = config.f;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write discovery file: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write discovery file: " + path);
}

std::optional<ClusterConfig> load_discovery_file(
    const std::string& path, const PublicKey& discovery_pub) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    nlohmann::json j = nlohmann::json::parse(ss.str());
    Bytes body = from_hex(j.at("cluster").get<std::string>());
    Bytes sig_bytes = from_hex(j.at("signature").get<std::string>());
    if (sig_bytes.size() != crypto::kSignatureSize) return std::nullopt;
    Signature sig{};
    std::copy(sig_bytes.begin(), sig_bytes.end(), sig.begin());

    Decoder d(ByteView(body.data(), body.size()));
    ClusterConfig config = ClusterConfig::decode(d);
    d.expect_done();
    if (!verify(discovery_pub, discovery_signing_digest(config), sig)) {
      return std::nullopt;
    }
    if (config.validate()) return std::nullopt;
    return config;
  } catch (...) {
    return std::nullopt;
  }
}

// ---- Client-side frame helpers ----

Bytes encode_infer_submit(const InferenceRequest& req) {
  Encoder e;
  req.encode(e);
  return frame_message(MsgType::infer_submit, std::move(e).take());
}

Bytes encode_infer_poll(const Hash32& request_id) {
  Encoder e;
  e.hash(request_id);
  return frame_message(MsgType::infer_poll, std::move(e).take());
}

Bytes encode_group_op_submit(const GroupOp& op) {
  Encoder e;
  op.encode(e);
  return frame_message(MsgType::group_op_submit, std::move(e).take());
}

Bytes encode_group_op_poll(const Hash32& op_id) {
  Encoder e;
  e.hash(op_id);
  return frame_message(MsgType::group_op_poll, std::move(e).take());
}

Bytes encode_list_groups() {
  return frame_message(MsgType::list_groups, Bytes{});
}

std::optional<std::optional<InferenceResponse>> parse_infer_reply(
    ByteView frame) {
  try {
    Frame f = parse_frame(frame);
    if (f.type != MsgType::infer_reply) return std::nullopt;
    Decoder d(ByteView(f.payload.data(), f.payload.size()));
    std::optional<InferenceResponse> inner;
    if (d.u8() != 0) inner = InferenceResponse::decode(d);
    d.expect_done();
    return inner;
  } catch (const CodecError&) {
    return std::nullopt;
  }
}

std::optional<std::optional<GroupOpAck>> parse_group_op_reply(ByteView frame) {
  try {
    Frame f = parse_frame(frame);
    if (f.type != MsgType::group_op_reply) return std::nullopt;
    Decoder d(ByteView(f.payload.data(), f.payload.size()));
    std::optional<GroupOpAck> inner;
    if (d.u8() != 0) inner = GroupOpAck::decode(d);
    d.expect_done();
    return inner;
  } catch (const CodecError&) {
    return std::nullopt;
  }
}

std::optional<std::vector<GroupInfo>> parse_group_listing(ByteView frame) {
  try {
    Frame f = parse_frame(frame);
    if (f.type != MsgType::group_listing) return std::nullopt;
    Decoder d(ByteView(f.payload.data(), f.payload.size()));
    uint32_t n = d.u32be();
    std::vector<GroupInfo> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; i++) out.push_back(GroupInfo::decode(d));
    d.expect_done();
    return out;
  } catch (const CodecError&) {
    return std::nullopt;
  }
}

}  // namespace credo
