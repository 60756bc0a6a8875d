// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Hashing and signature primitives behind stable interfaces. The concrete
// suite (SHA-256 + Ed25519) is an implementation detail of this module;
// nothing outside depends on more than determinism and the usual
// collision/unforgeability properties.

#pragma once

#include <array>
#include <optional>

#include "credo/bytes.hpp"

namespace credo::crypto {

inline constexpr size_t kPublicKeySize = 32;
inline constexpr size_t kSecretKeySize = 64;
inline constexpr size_t kSignatureSize = 64;
inline constexpr size_t kSeedSize = 32;

using PublicKey = std::array<uint8_t, kPublicKeySize>;
using Signature = std::array<uint8_t, kSignatureSize>;

Hash32 hash(ByteView data);
Hash32 hash(const Bytes& data);

/// Streaming convenience: hash of the concatenation of several views.
Hash32 hash_concat(std::initializer_list<ByteView> parts);

class KeyPair {
 public:
  /// Fresh random keypair.
  static KeyPair generate();
  /// Deterministic keypair from a 32-byte seed.
  static KeyPair from_seed(const std::array<uint8_t, kSeedSize>& seed);
  /// Rebuild from a stored secret key.
  static KeyPair from_secret(const std::array<uint8_t, kSecretKeySize>& sk);

  const PublicKey& public_key() const { return pub_; }
  const std::array<uint8_t, kSecretKeySize>& secret_key() const { return sec_; }

  Signature sign(ByteView msg) const;
  Signature sign(const Hash32& digest) const;

 private:
  KeyPair() = default;
  PublicKey pub_{};
  std::array<uint8_t, kSecretKeySize> sec_{};
};

/// Total: malformed keys or signatures verify false, never throw.
bool verify(const PublicKey& pub, ByteView msg, const Signature& sig);
bool verify(const PublicKey& pub, const Hash32& digest, const Signature& sig);

}  // namespace credo::crypto

namespace credo {
using crypto::hash;
using crypto::hash_concat;
using crypto::KeyPair;
using crypto::PublicKey;
using crypto::Signature;
using crypto::verify;
}  // namespace credo
