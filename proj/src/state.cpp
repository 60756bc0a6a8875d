// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/state.hpp"

#include <bit>

namespace credo {

uint64_t StateMachine::epsilon_bits(const InferenceRequest& req) const {
  if (req.epsilon_override) {
    return std::bit_cast<uint64_t>(*req.epsilon_override);
  }
  auto it = groups_.find(req.group_id);
  if (it == groups_.end() || !it->second.active) return 0;
  const ModelGroup& g = it->second.versions.at(*it->second.active);
  return std::bit_cast<uint64_t>(g.distance.default_epsilon);
}

StateMachine::Outcome StateMachine::apply(const OpEntry& op) {
  Outcome out;
  switch (op.kind) {
    case OpKind::request_inf: {
      const InferenceRequest& req = *op.request;
      auto it = groups_.find(req.group_id);
      if (it == groups_.end()) {
        out.status = OpStatus::rejected;
        out.reason = "unknown group";
        return out;
      }
      if (!it->second.active) {
        out.status = OpStatus::rejected;
        out.reason = "no active version";
        return out;
      }
      uint64_t eps = epsilon_bits(req);
      auto& seen = seen_requests_[req.request_id];
      if (!seen.insert(eps).second) {
        out.status = OpStatus::rejected;
        out.reason = "duplicate";
        return out;
      }
      out.version = *it->second.active;
      return out;
    }
    case OpKind::define_group: {
      const GroupOp& g = *op.group_op;
      if (seen_group_ops_.contains(g.op_id())) {
        out.status = OpStatus::rejected;
        out.reason = "duplicate";
        return out;
      }
      GroupVersions& gv = groups_[g.group_id];
      uint64_t v = gv.last_version + 1;
      ModelGroup meta;
      meta.group_id = g.group_id;
      meta.version = v;
      meta.models = g.definition->models;
      meta.distance = g.definition->distance;
      meta.status = GroupStatus::defined;
      if (auto err = meta.validate()) {
        if (gv.last_version == 0 && gv.versions.empty()) {
          groups_.erase(g.group_id);
        }
        out.status = OpStatus::rejected;
        out.reason = *err;
        return out;
      }
      gv.last_version = v;
      gv.versions.emplace(v, std::move(meta));
      seen_group_ops_.insert(g.op_id());
      out.version = v;
      return out;
    }
    case OpKind::activate_group: {
      const GroupOp& g = *op.group_op;
      if (seen_group_ops_.contains(g.op_id())) {
        out.status = OpStatus::rejected;
        out.reason = "duplicate";
        return out;
      }
      auto it = groups_.find(g.group_id);
      if (it == groups_.end()) {
        out.status = OpStatus::rejected;
        out.reason = "unknown group";
        return out;
      }
      GroupVersions& gv = it->second;
      uint64_t candidate = gv.last_version;
      if (candidate == 0 ||
          gv.versions.at(candidate).status != GroupStatus::defined) {
        out.status = OpStatus::rejected;
        out.reason = "no defined version to activate";
        return out;
      }
      if (gv.active) {
        gv.versions.at(*gv.active).status = GroupStatus::retired;
      }
      gv.versions.at(candidate).status = GroupStatus::active;
      gv.active = candidate;
      seen_group_ops_.insert(g.op_id());
      out.version = candidate;
      return out;
    }
    case OpKind::retire_group: {
      const GroupOp& g = *op.group_op;
      if (seen_group_ops_.contains(g.op_id())) {
        out.status = OpStatus::rejected;
        out.reason = "duplicate";
        return out;
      }
      auto it = groups_.find(g.group_id);
      if (it == groups_.end()) {
        out.status = OpStatus::rejected;
        out.reason = "unknown group";
        return out;
      }
      GroupVersions& gv = it->second;
      bool any = false;
      for (auto& [v, meta] : gv.versions) {
        if (meta.status != GroupStatus::retired) {
          meta.status = GroupStatus::retired;
          any = true;
        }
      }
      gv.active = std::nullopt;
      if (!any) {
        out.status = OpStatus::rejected;
        out.reason = "already retired";
        return out;
      }
      seen_group_ops_.insert(g.op_id());
      out.version = gv.last_version;
      return out;
    }
  }
  out.status = OpStatus::rejected;
  out.reason = "unknown op kind";
  return out;
}

void StateMachine::annotate_batch(std::vector<OpEntry>& ops) {
  for (OpEntry& op : ops) {
    Outcome o = apply(op);
    op.version = o.version;
    op.status = o.status;
    op.reason = o.reason;
  }
}

void StateMachine::apply_ordered_op(const OpEntry& op) { apply(op); }

bool StateMachine::validate_batch(const std::vector<OpEntry>& ops) {
  StateMachine scratch = *this;
  for (const OpEntry& op : ops) {
    Outcome o = scratch.apply(op);
    if (o.version != op.version || o.status != op.status ||
        o.reason != op.reason) {
      return false;
    }
  }
  *this = std::move(scratch);
  return true;
}

Hash32 StateMachine::digest() const {
  Encoder e;
  e.u32be(static_cast<uint32_t>(groups_.size()));
  for (const auto& [id, gv] : groups_) {
    e.str(id);
    e.u64(gv.last_version);
    e.optional(gv.active, [](Encoder& enc, uint64_t v) { enc.u64(v); });
    e.u32be(static_cast<uint32_t>(gv.versions.size()));
    for (const auto& [v, meta] : gv.versions) {
      e.u64(v);
      meta.encode(e);
    }
  }
  e.u32be(static_cast<uint32_t>(seen_requests_.size()));
  for (const auto& [id, epss] : seen_requests_) {
    e.hash(id);
    e.u32be(static_cast<uint32_t>(epss.size()));
    for (uint64_t bits : epss) e.u64(bits);
  }
  e.u32be(static_cast<uint32_t>(seen_group_ops_.size()));
  for (const Hash32& id : seen_group_ops_) e.hash(id);
  return hash(e.data());
}

const GroupVersions* StateMachine::group(const std::string& id) const {
  auto it = groups_.find(id);
  return it == groups_.end() ? nullptr : &it->second;
}

std::vector<ModelGroup> StateMachine::active_groups() const {
  std::vector<ModelGroup> out;
  for (const auto& [id, gv] : groups_) {
    if (gv.active) out.push_back(gv.versions.at(*gv.active));
  }
  return out;
}

}  // namespace credo
