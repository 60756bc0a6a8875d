// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Binary Merkle trees with authentication paths, used for the per-batch
// result tree and the attestation tree. Leaves hash under domain byte 0x00
// and interior nodes under 0x01, so leaf bytes cannot impersonate interior
// nodes. An unpaired node is promoted unchanged to the next level rather
// than duplicated; duplication would let an n-leaf and an (n+1)-leaf tree
// share a root.
//
// An authentication path is exactly the sibling sequence the verifier
// folds, bottom to top. It deliberately carries nothing else: any extra
// field (say, a leaf position) would be unverifiable against the root, and
// bytes a verifier cannot check are bytes a forger may rewrite freely.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "credo/bytes.hpp"
#include "credo/codec.hpp"
#include "credo/crypto.hpp"

namespace credo::merkle {

/// Which side the sibling sits on, from the verifier's point of view.
enum class Side : uint8_t {
  left = 0,
  right = 1,
};

struct PathStep {
  Hash32 sibling;
  Side side = Side::left;

  bool operator==(const PathStep&) const = default;
};

struct AuthPath {
  std::vector<PathStep> siblings;  // bottom level first

  bool operator==(const AuthPath&) const = default;

  void encode(Encoder& e) const;
  static AuthPath decode(Decoder& d);
};

/// H(0x00 || leaf bytes).
Hash32 leaf_hash(ByteView leaf);

class Tree {
 public:
  /// Builds the full tree. Throws std::invalid_argument on an empty list.
  static Tree build(const std::vector<Bytes>& leaves);

  const Hash32& root() const { return levels_.back().back(); }
  size_t leaf_count() const { return levels_.front().size(); }

  /// Sibling sequence proving membership of leaf `index`.
  /// Throws std::out_of_range when index is outside the leaf count.
  AuthPath auth_path(size_t index) const;

 private:
  Tree() = default;
  std::vector<std::vector<Hash32>> levels_;  // levels_[0] = leaf hashes
};

/// Pure fold: starts from H(0x00 || leaf) and combines each sibling on its
/// stated side. Total; the result is only meaningful compared against a
/// trusted root.
Hash32 get_merkle_root(const AuthPath& path, ByteView leaf);

}  // namespace credo::merkle
