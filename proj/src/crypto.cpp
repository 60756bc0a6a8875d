// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/crypto.hpp"

#include <sodium.h>

#include <mutex>
#include <stdexcept>

namespace credo::crypto {

namespace {
void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw std::runtime_error("sodium_init failed");
  });
}
}  // namespace

Hash32 hash(ByteView data) {
  ensure_sodium();
  Hash32 out;
  crypto_hash_sha256(out.data.data(), data.data(), data.size());
  return out;
}

Hash32 hash(const Bytes& data) { return hash(ByteView(data)); }

Hash32 hash_concat(std::initializer_list<ByteView> parts) {
  ensure_sodium();
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  for (const auto& p : parts) crypto_hash_sha256_update(&st, p.data(), p.size());
  Hash32 out;
  crypto_hash_sha256_final(&st, out.data.data());
  return out;
}

KeyPair KeyPair::generate() {
  ensure_sodium();
  KeyPair kp;
  crypto_sign_keypair(kp.pub_.data(), kp.sec_.data());
  return kp;
}

KeyPair KeyPair::from_seed(const std::array<uint8_t, kSeedSize>& seed) {
  ensure_sodium();
  KeyPair kp;
  crypto_sign_seed_keypair(kp.pub_.data(), kp.sec_.data(), seed.data());
  return kp;
}

KeyPair KeyPair::from_secret(const std::array<uint8_t, kSecretKeySize>& sk) {
  ensure_sodium();
  KeyPair kp;
  kp.sec_ = sk;
  crypto_sign_ed25519_sk_to_pk(kp.pub_.data(), sk.data());
  return kp;
}

Signature KeyPair::sign(ByteView msg) const {
  ensure_sodium();
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, msg.data(), msg.size(),
                       sec_.data());
  return sig;
}

Signature KeyPair::sign(const Hash32& digest) const {
  return sign(ByteView(digest.data.data(), digest.data.size()));
}

bool verify(const PublicKey& pub, ByteView msg, const Signature& sig) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), msg.data(), msg.size(),
                                     pub.data()) == 0;
}

bool verify(const PublicKey& pub, const Hash32& digest, const Signature& sig) {
  return verify(pub, ByteView(digest.data.data(), digest.data.size()), sig);
}

}  // namespace credo::crypto
