// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// The node's only window onto time and the network. Simulation supplies a
// virtual clock and a deterministic in-memory network; live deployment
// supplies the wall clock and sockets. Node logic is identical either way.

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "credo/bytes.hpp"

namespace credo {

class Env {
 public:
  using TimerId = uint64_t;

  virtual ~Env() = default;

  virtual uint64_t now_us() = 0;

  /// One-shot timer. The callback runs on the node's event path.
  virtual TimerId schedule(uint64_t delay_us, std::function<void()> fn) = 0;
  virtual void cancel(TimerId id) = 0;

  /// Delivers one frame to a peer node, best effort.
  virtual void send(uint64_t to_node, const Bytes& frame) = 0;

  /// Appends one line to the node's trace log.
  virtual void trace(const std::string& line) = 0;
};

}  // namespace credo
