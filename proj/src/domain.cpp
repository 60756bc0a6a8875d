// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/domain.hpp"

#include <cmath>
#include <stdexcept>

namespace credo {

void NodeIdentity::encode(Encoder& e) const {
  e.fixed(ByteView(public_key.data(), public_key.size()));
  e.str(endpoint);
  e.u64(index);
}

NodeIdentity NodeIdentity::decode(Decoder& d) {
  NodeIdentity out;
  d.fixed(std::span<uint8_t>(out.public_key.data(), out.public_key.size()));
  out.endpoint = d.str();
  out.index = d.u64();
  return out;
}

std::optional<std::string> ClusterConfig::validate() const {
  if (nodes.empty()) return "no nodes";
  if (nodes.size() < 3 * f + 1) return "fewer than 3f+1 nodes";
  for (size_t i = 0; i < nodes.size(); i++) {
    if (nodes[i].index != i) return "node index does not match position";
    if (i > 0 && !(nodes[i - 1].public_key < nodes[i].public_key)) {
      return "node keys not in strict ascending order";
    }
  }
  if (exec_batch_max < 1) return "exec_batch_max < 1";
  if (agree_batch_max < 1) return "agree_batch_max < 1";
  if (agree_pipeline < 1) return "agree_pipeline < 1";
  if (checkpoint_interval < 1) return "checkpoint_interval < 1";
  if (view_timeout_us < 1) return "view_timeout < 1us";
  return std::nullopt;
}

void ClusterConfig::encode(Encoder& e) const {
  e.list(nodes, [](Encoder& enc, const NodeIdentity& n) { n.encode(enc); });
  e.u64(f);
  e.u64(view_timeout_us);
  e.u64(exec_batch_max);
  e.u64(agree_batch_max);
  e.u64(agree_pipeline);
  e.u64(checkpoint_interval);
}

ClusterConfig ClusterConfig::decode(Decoder& d) {
  ClusterConfig out;
  out.nodes = d.list<NodeIdentity>(
      [](Decoder& dec) { return NodeIdentity::decode(dec); });
  out.f = d.u64();
  out.view_timeout_us = d.u64();
  out.exec_batch_max = d.u64();
  out.agree_batch_max = d.u64();
  out.agree_pipeline = d.u64();
  out.checkpoint_interval = d.u64();
  return out;
}

void ModelDescriptor::encode(Encoder& e) const {
  e.str(model_url);
  e.u32be(static_cast<uint32_t>(params.size()));
  for (const auto& [k, v] : params) {  // std::map iterates in key order
    e.str(k);
    e.str(v);
  }
  e.u64(input_dim);
  e.u64(output_dim);
  e.hash(weights_digest);
}

ModelDescriptor ModelDescriptor::decode(Decoder& d) {
  ModelDescriptor out;
  out.model_url = d.str();
  uint32_t n = d.u32be();
  for (uint32_t i = 0; i < n; i++) {
    std::string k = d.str();
    std::string v = d.str();
    if (!out.params.emplace(std::move(k), std::move(v)).second) {
      throw CodecError("duplicate model param key");
    }
  }
  out.input_dim = d.u64();
  out.output_dim = d.u64();
  out.weights_digest = d.hash();
  return out;
}

std::string group_status_name(GroupStatus s) {
  switch (s) {
    case GroupStatus::defined: return "defined";
    case GroupStatus::active: return "active";
    case GroupStatus::retired: return "retired";
  }
  return "unknown";
}

std::optional<std::string> ModelGroup::validate() const {
  if (group_id.empty()) return "empty group_id";
  if (version < 1) return "version must start at 1";
  if (models.empty()) return "empty model list";
  for (const auto& m : models) {
    if (m.input_dim < 1 || m.output_dim < 1) return "zero model dimension";
    if (m.input_dim != models.front().input_dim ||
        m.output_dim != models.front().output_dim) {
      return "models disagree on dimensions";
    }
  }
  if (!(distance.default_epsilon >= 0.0)) return "negative epsilon";
  return std::nullopt;
}

void ModelGroup::encode(Encoder& e) const {
  e.str(group_id);
  e.u64(version);
  e.list(models,
         [](Encoder& enc, const ModelDescriptor& m) { m.encode(enc); });
  distance.encode(e);
  e.u8(static_cast<uint8_t>(status));
}

ModelGroup ModelGroup::decode(Decoder& d) {
  ModelGroup out;
  out.group_id = d.str();
  out.version = d.u64();
  out.models = d.list<ModelDescriptor>(
      [](Decoder& dec) { return ModelDescriptor::decode(dec); });
  out.distance = distance::DistanceDescriptor::decode(d);
  uint8_t s = d.u8();
  if (s > static_cast<uint8_t>(GroupStatus::retired)) {
    throw CodecError("unknown group status");
  }
  out.status = static_cast<GroupStatus>(s);
  return out;
}

namespace {

void encode_request_body(Encoder& e, const InferenceRequest& r) {
  e.hash(r.request_id);
  e.str(r.group_id);
  e.f64_list(r.input);
  e.optional(r.epsilon_override, [](Encoder& enc, double v) { enc.f64(v); });
  e.fixed(ByteView(r.client_pub.data(), r.client_pub.size()));
  e.bytes(r.client_nonce);
}

}  // namespace

void InferenceRequest::encode(Encoder& e) const {
  encode_request_body(e, *this);
  e.fixed(ByteView(client_sig.data(), client_sig.size()));
}

InferenceRequest InferenceRequest::decode(Decoder& d) {
  InferenceRequest out;
  out.request_id = d.hash();
  out.group_id = d.str();
  out.input = d.f64_list();
  out.epsilon_override =
      d.optional<double>([](Decoder& dec) { return dec.f64(); });
  if (out.epsilon_override &&
      (!(*out.epsilon_override >= 0.0) || !std::isfinite(*out.epsilon_override))) {
    throw CodecError("bad epsilon override");
  }
  d.fixed(std::span<uint8_t>(out.client_pub.data(), out.client_pub.size()));
  out.client_nonce = d.bytes();
  d.fixed(std::span<uint8_t>(out.client_sig.data(), out.client_sig.size()));
  return out;
}

Hash32 InferenceRequest::signing_digest() const {
  Encoder e;
  e.u8(kRequestSigTag);
  encode_request_body(e, *this);
  return hash(e.data());
}

InferenceRequest make_signed_request(const KeyPair& client, Bytes nonce,
                                     std::string group_id,
                                     std::vector<double> input,
                                     std::optional<double> epsilon_override) {
  if (nonce.empty()) {
    throw std::invalid_argument("make_signed_request: empty nonce");
  }
  InferenceRequest req;
  req.client_pub = client.public_key();
  req.client_nonce = std::move(nonce);
  req.request_id = canonical_request_id(
      ByteView(req.client_pub.data(), req.client_pub.size()),
      ByteView(req.client_nonce.data(), req.client_nonce.size()));
  req.group_id = std::move(group_id);
  req.input = std::move(input);
  req.epsilon_override = epsilon_override;
  req.client_sig = client.sign(req.signing_digest());
  return req;
}

bool verify_request(const InferenceRequest& req) {
  if (req.client_nonce.empty()) return false;
  if (req.input.empty()) return false;
  if (req.epsilon_override &&
      (!(*req.epsilon_override >= 0.0) || !std::isfinite(*req.epsilon_override))) {
    return false;
  }
  Hash32 expect_id = canonical_request_id(
      ByteView(req.client_pub.data(), req.client_pub.size()),
      ByteView(req.client_nonce.data(), req.client_nonce.size()));
  if (expect_id != req.request_id) return false;
  return verify(req.client_pub, req.signing_digest(), req.client_sig);
}

void InferenceResult::encode(Encoder& e) const {
  e.hash(request_id);
  e.u64(node_index);
  e.str(group_id);
  e.u64(group_version);
  e.f64_list(output);
  e.hash(model_digest);
}

InferenceResult InferenceResult::decode(Decoder& d) {
  InferenceResult out;
  out.request_id = d.hash();
  out.node_index = d.u64();
  out.group_id = d.str();
  out.group_version = d.u64();
  out.output = d.f64_list();
  out.model_digest = d.hash();
  return out;
}

Hash32 canonical_request_id(ByteView client_id, ByteView nonce) {
  static constexpr uint8_t kSep = 0x1F;
  return hash_concat({client_id, ByteView(&kSep, 1), nonce});
}

uint64_t primary_index(uint64_t view, const ClusterConfig& config) {
  return view % config.n();
}

std::vector<ModelDescriptor> assigned_models(uint64_t owner_node_count,
                                             const ModelGroup& group,
                                             const NodeIdentity& node) {
  if (owner_node_count < 1) {
    throw std::invalid_argument("assigned_models: no owner nodes");
  }
  if (group.models.empty()) {
    throw std::invalid_argument("assigned_models: empty group");
  }
  if (node.index >= owner_node_count) {
    throw std::invalid_argument("assigned_models: node rank out of range");
  }
  const uint64_t g = group.models.size();
  const uint64_t d = owner_node_count;
  const uint64_t chunk_size = (g + d - 1) / d;  // ceil(|G| / d)
  const uint64_t num_chunks = (g + chunk_size - 1) / chunk_size;
  const uint64_t chunk = node.index % num_chunks;
  const uint64_t begin = chunk * chunk_size;
  const uint64_t end = std::min(begin + chunk_size, g);
  return std::vector<ModelDescriptor>(group.models.begin() + begin,
                                      group.models.begin() + end);
}

}  // namespace credo
