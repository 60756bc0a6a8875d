// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/merkle.hpp"

#include <stdexcept>

namespace credo::merkle {

namespace {
constexpr uint8_t kLeafDomain = 0x00;
constexpr uint8_t kInternalDomain = 0x01;

Hash32 internal_hash(const Hash32& left, const Hash32& right) {
  const uint8_t domain = kInternalDomain;
  return crypto::hash_concat({ByteView(&domain, 1),
                              ByteView(left.data.data(), left.data.size()),
                              ByteView(right.data.data(), right.data.size())});
}
}  // namespace

Hash32 leaf_hash(ByteView leaf) {
  const uint8_t domain = kLeafDomain;
  return crypto::hash_concat({ByteView(&domain, 1), leaf});
}

void AuthPath::encode(Encoder& e) const {
  e.list(siblings, [](Encoder& enc, const PathStep& s) {
    enc.u8(static_cast<uint8_t>(s.side));
    enc.hash(s.sibling);
  });
}

AuthPath AuthPath::decode(Decoder& d) {
  AuthPath p;
  p.siblings = d.list<PathStep>([](Decoder& dec) {
    PathStep s;
    uint8_t side = dec.u8();
    if (side > 1) throw CodecError("invalid path side");
    s.side = static_cast<Side>(side);
    s.sibling = dec.hash();
    return s;
  });
  return p;
}

Tree Tree::build(const std::vector<Bytes>& leaves) {
  if (leaves.empty()) throw std::invalid_argument("merkle: empty leaf list");
  Tree t;
  std::vector<Hash32> level;
  level.reserve(leaves.size());
  for (const auto& l : leaves) level.push_back(leaf_hash(l));
  t.levels_.push_back(std::move(level));
  while (t.levels_.back().size() > 1) {
    const auto& prev = t.levels_.back();
    std::vector<Hash32> next;
    next.reserve((prev.size() + 1) / 2);
    for (size_t i = 0; i < prev.size(); i += 2) {
      if (i + 1 < prev.size())
        next.push_back(internal_hash(prev[i], prev[i + 1]));
      else
        next.push_back(prev[i]);  // unpaired node promoted
    }
    t.levels_.push_back(std::move(next));
  }
  return t;
}

AuthPath Tree::auth_path(size_t index) const {
  if (index >= leaf_count()) throw std::out_of_range("merkle: leaf index");
  AuthPath path;
  size_t idx = index;
  for (size_t lvl = 0; lvl + 1 < levels_.size(); lvl++) {
    const auto& level = levels_[lvl];
    if (idx % 2 == 1) {
      path.siblings.push_back({level[idx - 1], Side::left});
    } else if (idx + 1 < level.size()) {
      path.siblings.push_back({level[idx + 1], Side::right});
    }
    // else: promotion, no sibling at this level
    idx /= 2;
  }
  return path;
}

Hash32 get_merkle_root(const AuthPath& path, ByteView leaf) {
  Hash32 h = leaf_hash(leaf);
  for (const PathStep& step : path.siblings) {
    h = step.side == Side::left ? internal_hash(step.sibling, h)
                                : internal_hash(h, step.sibling);
  }
  return h;
}

}  // namespace credo::merkle
