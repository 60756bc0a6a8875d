// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for property tests: a seeded RNG so failures reproduce,
// plus small generators for random bytes and float vectors.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "credo/bytes.hpp"

namespace credo::testing {

struct Rng {
  explicit Rng(uint64_t seed) : gen(seed) {}

  uint64_t u64() { return gen(); }

  uint64_t below(uint64_t bound) {
    return std::uniform_int_distribution<uint64_t>(0, bound - 1)(gen);
  }

  uint8_t byte() { return static_cast<uint8_t>(below(256)); }

  bool chance(double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(gen) < p;
  }

  double real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }

  Bytes bytes(size_t n) {
    Bytes out(n);
    for (auto& b : out) b = byte();
    return out;
  }

  std::vector<double> vec(size_t dim, double lo, double hi) {
    std::vector<double> out(dim);
    for (auto& v : out) v = real(lo, hi);
    return out;
  }

  std::string string(size_t n) {
    std::string out(n, '\0');
    for (auto& c : out) c = static_cast<char>('a' + below(26));
    return out;
  }

  std::mt19937_64 gen;
};

}  // namespace credo::testing
