// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "credo/merkle.hpp"
#include "oracle_helpers.hpp"

using namespace credo;
using namespace credo::merkle;
using credo::testing::Rng;

namespace {

// Independent reference construction: folds level by level exactly as the
// rules state but with a separate code path (pair vectors rather than the
// production levels array).
Hash32 reference_root(const std::vector<Bytes>& leaves) {
  REQUIRE(!leaves.empty());
  std::vector<Hash32> level;
  for (const auto& l : leaves) {
    level.push_back(leaf_hash(ByteView(l.data(), l.size())));
  }
  while (level.size() > 1) {
    std::vector<Hash32> next;
    size_t i = 0;
    for (; i + 1 < level.size(); i += 2) {
      Encoder e;
      e.u8(0x01);
      e.hash(level[i]);
      e.hash(level[i + 1]);
      next.push_back(hash(e.data()));
    }
    if (i < level.size()) next.push_back(level[i]);  // promotion
    level = std::move(next);
  }
  return level[0];
}

Bytes encode_path(const AuthPath& p) {
  Encoder e;
  p.encode(e);
  return e.take();
}

}  // namespace

TEST_CASE("single leaf: root is the leaf hash, path is empty") {
  Bytes leaf = to_bytes("solo");
  Tree t = Tree::build({leaf});
  CHECK(t.root() == leaf_hash(ByteView(leaf.data(), leaf.size())));
  AuthPath p = t.auth_path(0);
  CHECK(p.siblings.empty());
  CHECK(get_merkle_root(p, ByteView(leaf.data(), leaf.size())) == t.root());
}

TEST_CASE("two leaves: root = H(0x01 || H(0x00||A) || H(0x00||B))") {
  Bytes a = to_bytes("A");
  Bytes b = to_bytes("B");
  Tree t = Tree::build({a, b});
  Encoder e;
  e.u8(0x01);
  e.hash(leaf_hash(ByteView(a.data(), a.size())));
  e.hash(leaf_hash(ByteView(b.data(), b.size())));
  CHECK(t.root() == hash(e.data()));
}

TEST_CASE("empty leaf list is rejected") {
  CHECK_THROWS_AS(Tree::build({}), std::invalid_argument);
}

TEST_CASE("out-of-range path index is rejected") {
  Tree t = Tree::build({to_bytes("x")});
  CHECK_THROWS_AS(t.auth_path(1), std::out_of_range);
}

TEST_CASE("roots match the reference construction for 1..64 leaves") {
  Rng rng(0x6e3d0001);
  for (size_t n = 1; n <= 64; n++) {
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(8));
    Tree t = Tree::build(leaves);
    CHECK(t.root() == reference_root(leaves));
  }
}

TEST_CASE("every auth path verifies, random trees, ~1e4 paths") {
  Rng rng(0x6e3d0002);
  size_t paths_checked = 0;
  while (paths_checked < 10'000) {
    size_t n = 1 + rng.below(64);
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(1 + rng.below(16)));
    Tree t = Tree::build(leaves);
    for (size_t i = 0; i < n; i++) {
      AuthPath p = t.auth_path(i);
      REQUIRE(get_merkle_root(p, ByteView(leaves[i].data(), leaves[i].size())) ==
              t.root());
      paths_checked++;
    }
  }
  CHECK(paths_checked >= 10'000);
}

TEST_CASE("changing any single leaf changes the root") {
  Rng rng(0x6e3d0003);
  for (int trial = 0; trial < 200; trial++) {
    size_t n = 2 + rng.below(32);
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(8));
    Tree t = Tree::build(leaves);
    size_t victim = rng.below(n);
    std::vector<Bytes> mutated = leaves;
    mutated[victim][rng.below(8)] ^= static_cast<uint8_t>(1 + rng.below(255));
    CHECK(Tree::build(mutated).root() != t.root());
  }
}

TEST_CASE("distinct random leaf sets give distinct roots") {
  Rng rng(0x6e3d0004);
  std::set<Hash32> roots;
  for (int trial = 0; trial < 2000; trial++) {
    std::vector<Bytes> leaves;
    size_t n = 1 + rng.below(8);
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(12));
    roots.insert(Tree::build(leaves).root());
  }
  CHECK(roots.size() == 2000);
}

TEST_CASE("leaf/internal domain separation") {
  // A leaf whose bytes mimic an internal-node preimage still hashes under
  // the leaf domain, so it cannot impersonate an interior node.
  Bytes a = to_bytes("a");
  Bytes b = to_bytes("b");
  Tree two = Tree::build({a, b});
  Encoder internal_preimage;
  internal_preimage.hash(leaf_hash(ByteView(a.data(), a.size())));
  internal_preimage.hash(leaf_hash(ByteView(b.data(), b.size())));
  Tree one = Tree::build({internal_preimage.take()});
  CHECK(one.root() != two.root());
}

TEST_CASE("promotion differs from duplication") {
  // With duplication, [a, b, c] and [a, b, c, c] would share a root.
  Rng rng(0x6e3d0005);
  Bytes a = rng.bytes(8), b = rng.bytes(8), c = rng.bytes(8);
  CHECK(Tree::build({a, b, c}).root() != Tree::build({a, b, c, c}).root());
}

TEST_CASE("auth path canonical encoding round-trips") {
  Rng rng(0x6e3d0006);
  for (int trial = 0; trial < 500; trial++) {
    size_t n = 1 + rng.below(32);
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(8));
    Tree t = Tree::build(leaves);
    AuthPath p = t.auth_path(rng.below(n));
    Bytes enc = encode_path(p);
    Decoder d(enc);
    AuthPath back = AuthPath::decode(d);
    d.expect_done();
    CHECK(back == p);
  }
}

TEST_CASE("every byte of an encoded auth path is load-bearing") {
  // Flipping any byte of the serialized path must either fail strict
  // decoding or change the reconstructed root; a surviving mutation would
  // let a forged certificate reuse honest paths.
  Rng rng(0x6e3d0007);
  int accepted = 0;
  int trials = 0;
  while (trials < 3000) {
    size_t n = 2 + rng.below(16);
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(8));
    Tree t = Tree::build(leaves);
    size_t idx = rng.below(n);
    AuthPath p = t.auth_path(idx);
    Bytes enc = encode_path(p);
    if (enc.size() <= 4) continue;  // single-leaf tree: only a count prefix
    Bytes mutated = enc;
    mutated[rng.below(enc.size())] ^= static_cast<uint8_t>(1 + rng.below(255));
    if (mutated == enc) continue;
    trials++;
    AuthPath back;
    try {
      Decoder d(mutated);
      back = AuthPath::decode(d);
      d.expect_done();
    } catch (const CodecError&) {
      continue;  // rejected at decode: fine
    }
    if (get_merkle_root(back, ByteView(leaves[idx].data(), leaves[idx].size())) ==
        t.root()) {
      accepted++;
    }
  }
  CHECK(accepted == 0);
}

TEST_CASE("fold order and sides are binding") {
  Rng rng(0x6e3d0008);
  for (int trial = 0; trial < 200; trial++) {
    size_t n = 2 + rng.below(16);
    std::vector<Bytes> leaves;
    for (size_t i = 0; i < n; i++) leaves.push_back(rng.bytes(8));
    Tree t = Tree::build(leaves);
    size_t idx = rng.below(n);
    AuthPath p = t.auth_path(idx);
    REQUIRE(!p.siblings.empty());

    // Swapping any step's side moves the node to the other operand slot.
    AuthPath side_flipped = p;
    size_t victim = rng.below(p.siblings.size());
    side_flipped.siblings[victim].side =
        side_flipped.siblings[victim].side == Side::left ? Side::right
                                                         : Side::left;
    CHECK(get_merkle_root(side_flipped,
                          ByteView(leaves[idx].data(), leaves[idx].size())) !=
          t.root());

    // Dropping the top step truncates the fold.
    AuthPath truncated = p;
    truncated.siblings.pop_back();
    CHECK(get_merkle_root(truncated,
                          ByteView(leaves[idx].data(), leaves[idx].size())) !=
          t.root());

    // The proven leaf itself is binding.
    Bytes other = leaves[idx];
    other[rng.below(other.size())] ^= 0x01;
    CHECK(get_merkle_root(p, ByteView(other.data(), other.size())) != t.root());
  }
}
