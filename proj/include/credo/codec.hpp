// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Canonical byte encoding shared by every signed or hashed value in the
// system. The rules are fixed: fields in declared order, unsigned integers
// as 8-byte big-endian, doubles as IEEE-754 binary64 big-endian bit
// patterns, variable byte strings and lists with a 4-byte big-endian
// count, enum tags as a single byte, optionals as a presence byte.
// Fixed-width fields (digests, keys, signatures) are written raw.

#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "credo/bytes.hpp"

namespace credo {

class CodecError : public std::runtime_error {
 public:
  explicit CodecError(const std::string& what) : std::runtime_error(what) {}
};

class Encoder {
 public:
  void u8(uint8_t v) { out_.push_back(v); }

  void u64(uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8)
      out_.push_back(static_cast<uint8_t>(v >> shift));
  }

  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

  void boolean(bool v) { u8(v ? 1 : 0); }

  void u32be(uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8)
      out_.push_back(static_cast<uint8_t>(v >> shift));
  }

  /// Length-prefixed variable bytes.
  void bytes(ByteView v) {
    if (v.size() > 0xffffffffull) throw CodecError("byte string too long");
    u32be(static_cast<uint32_t>(v.size()));
    out_.insert(out_.end(), v.begin(), v.end());
  }

  void str(const std::string& s) {
    bytes(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
  }

  /// Fixed-width field, written raw with no prefix.
  void fixed(ByteView v) { out_.insert(out_.end(), v.begin(), v.end()); }

  void hash(const Hash32& h) { fixed(ByteView(h.data.data(), h.data.size())); }

  template <typename T, typename Fn>
  void list(const std::vector<T>& xs, Fn&& encode_one) {
    if (xs.size() > 0xffffffffull) throw CodecError("list too long");
    u32be(static_cast<uint32_t>(xs.size()));
    for (const auto& x : xs) encode_one(*this, x);
  }

  void f64_list(const std::vector<double>& xs) {
    list(xs, [](Encoder& e, double v) { e.f64(v); });
  }

  template <typename T, typename Fn>
  void optional(const std::optional<T>& v, Fn&& encode_one) {
    boolean(v.has_value());
    if (v) encode_one(*this, *v);
  }

  const Bytes& data() const { return out_; }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

/// Holds a view of the caller's buffer; the buffer must outlive the Decoder.
class Decoder {
 public:
  explicit Decoder(ByteView data) : data_(data) {}

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v = (v << 8) | data_[pos_++];
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  bool boolean() {
    uint8_t v = u8();
    if (v > 1) throw CodecError("invalid boolean");
    return v == 1;
  }

  uint32_t u32be() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v = (v << 8) | data_[pos_++];
    return v;
  }

  Bytes bytes() {
    uint32_t len = u32be();
    need(len);
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + len);
    pos_ += len;
    return out;
  }

  std::string str() {
    Bytes b = bytes();
    return std::string(b.begin(), b.end());
  }

  void fixed(std::span<uint8_t> out) {
    need(out.size());
    std::copy(data_.begin() + pos_, data_.begin() + pos_ + out.size(),
              out.begin());
    pos_ += out.size();
  }

  Hash32 hash() {
    Hash32 h;
    fixed(h.data);
    return h;
  }

  template <typename T, typename Fn>
  std::vector<T> list(Fn&& decode_one) {
    uint32_t n = u32be();
    // Each element consumes at least one byte; reject counts the buffer
    // cannot possibly hold so corrupt prefixes fail fast instead of OOMing.
    if (n > remaining()) throw CodecError("list count exceeds buffer");
    std::vector<T> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; i++) out.push_back(decode_one(*this));
    return out;
  }

  std::vector<double> f64_list() {
    uint32_t n = u32be();
    if (static_cast<uint64_t>(n) * 8 > remaining())
      throw CodecError("f64 list count exceeds buffer");
    std::vector<double> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; i++) out.push_back(f64());
    return out;
  }

  template <typename T, typename Fn>
  std::optional<T> optional(Fn&& decode_one) {
    if (!boolean()) return std::nullopt;
    return decode_one(*this);
  }

  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  void expect_done() const {
    if (!done()) throw CodecError("trailing bytes after value");
  }

 private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n) throw CodecError("unexpected end of input");
  }

  ByteView data_;
  size_t pos_ = 0;
};

}  // namespace credo
