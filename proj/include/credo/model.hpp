// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Pluggable model execution. The built-in backend is a linear map with an
// optional softmax head, enough to give model groups real numerics (distinct
// weights, distinct outputs, honest disagreement under perturbation) without
// dragging in an inference runtime. The executor interface is the seam where
// a real backend would plug in.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "credo/bytes.hpp"
#include "credo/codec.hpp"
#include "credo/crypto.hpp"

namespace credo {

struct LinearToyModel {
  uint64_t input_dim = 0;
  uint64_t output_dim = 0;
  bool softmax = false;
  std::vector<double> weights;  // row-major, output_dim x input_dim
  std::vector<double> bias;     // output_dim

  bool operator==(const LinearToyModel&) const = default;

  /// softmax?(W.x + b). Throws std::invalid_argument on dimension mismatch.
  std::vector<double> run(const std::vector<double>& x) const;

  /// Canonical file form; the weights digest in a ModelDescriptor is the
  /// hash of exactly these bytes.
  Bytes to_file_bytes() const;
  static LinearToyModel from_file_bytes(ByteView data);
  Hash32 digest() const;
};

class ModelExecutor {
 public:
  virtual ~ModelExecutor() = default;

  /// One output vector per input vector, in order. Deterministic: the same
  /// model and inputs give bit-identical outputs on the same node.
  /// Throws std::invalid_argument when an input does not fit the model.
  virtual std::vector<std::vector<double>> run(
      const LinearToyModel& model,
      const std::vector<std::vector<double>>& inputs) = 0;
};

/// Runs the toy model directly.
class ToyExecutor : public ModelExecutor {
 public:
  std::vector<std::vector<double>> run(
      const LinearToyModel& model,
      const std::vector<std::vector<double>>& inputs) override;
};

/// Wraps another executor and adds a small per-node output perturbation,
/// standing in for cross-node hardware nondeterminism. The offset for each
/// output lane is derived by hashing (node index, model digest, input,
/// lane), so one node is bit-deterministic while different nodes disagree
/// within +/- magnitude per lane.
class PerturbingExecutor : public ModelExecutor {
 public:
  PerturbingExecutor(std::unique_ptr<ModelExecutor> inner, uint64_t node_index,
                     double magnitude);

  std::vector<std::vector<double>> run(
      const LinearToyModel& model,
      const std::vector<std::vector<double>>& inputs) override;

 private:
  std::unique_ptr<ModelExecutor> inner_;
  uint64_t node_index_;
  double magnitude_;
};

}  // namespace credo
