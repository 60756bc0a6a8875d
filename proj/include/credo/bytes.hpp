// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace credo {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

/// 32-byte digest (SHA-256 width).
struct Hash32 {
  std::array<uint8_t, 32> data{};

  bool operator==(const Hash32&) const = default;
  auto operator<=>(const Hash32&) const = default;
  bool is_zero() const {
    for (auto b : data)
      if (b != 0) return false;
    return true;
  }
};

struct Hash32Hasher {
  size_t operator()(const Hash32& h) const {
    size_t v;
    std::memcpy(&v, h.data.data(), sizeof(v));
    return v;
  }
};

std::string to_hex(ByteView data);
Bytes from_hex(const std::string& hex);  // throws std::invalid_argument

inline std::string to_hex(const Hash32& h) {
  return to_hex(ByteView(h.data.data(), h.data.size()));
}

inline Bytes to_bytes(const std::string& s) {
  return Bytes(s.begin(), s.end());
}

}  // namespace credo
