// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace credo {

std::vector<double> LinearToyModel::run(const std::vector<double>& x) const {
  if (x.size() != input_dim) {
    throw std::invalid_argument("model input dimension mismatch");
  }
  if (weights.size() != input_dim * output_dim || bias.size() != output_dim) {
    throw std::invalid_argument("model parameter shape mismatch");
  }
  std::vector<double> y(output_dim, 0.0);
  for (uint64_t row = 0; row < output_dim; row++) {
    double acc = bias[row];
    const double* w = weights.data() + row * input_dim;
    for (uint64_t col = 0; col < input_dim; col++) acc += w[col] * x[col];
    y[row] = acc;
  }
  if (softmax) {
    double peak = *std::max_element(y.begin(), y.end());
    double sum = 0.0;
    for (auto& v : y) {
      v = std::exp(v - peak);
      sum += v;
    }
    for (auto& v : y) v /= sum;
  }
  return y;
}

Bytes LinearToyModel::to_file_bytes() const {
  Encoder e;
  e.u64(input_dim);
  e.u64(output_dim);
  e.boolean(softmax);
  e.f64_list(weights);
  e.f64_list(bias);
  return e.take();
}

LinearToyModel LinearToyModel::from_file_bytes(ByteView data) {
  Decoder d(data);
  LinearToyModel m;
  m.input_dim = d.u64();
  m.output_dim = d.u64();
  m.softmax = d.boolean();
  m.weights = d.f64_list();
  m.bias = d.f64_list();
  d.expect_done();
  if (m.input_dim < 1 || m.output_dim < 1 ||
      m.weights.size() != m.input_dim * m.output_dim ||
      m.bias.size() != m.output_dim) {
    throw CodecError("model file shape mismatch");
  }
  return m;
}

Hash32 LinearToyModel::digest() const { return hash(to_file_bytes()); }

std::vector<std::vector<double>> ToyExecutor::run(
    const LinearToyModel& model, const std::vector<std::vector<double>>& inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(model.run(x));
  return out;
}

PerturbingExecutor::PerturbingExecutor(std::unique_ptr<ModelExecutor> inner,
                                       uint64_t node_index, double magnitude)
    : inner_(std::move(inner)), node_index_(node_index), magnitude_(magnitude) {
  if (!inner_) throw std::invalid_argument("null inner executor");
  if (!(magnitude >= 0.0)) throw std::invalid_argument("negative magnitude");
}

std::vector<std::vector<double>> PerturbingExecutor::run(
    const LinearToyModel& model, const std::vector<std::vector<double>>& inputs) {
  auto outputs = inner_->run(model, inputs);
  if (magnitude_ == 0.0) return outputs;
  Hash32 model_digest = model.digest();
  for (size_t i = 0; i < outputs.size(); i++) {
    Encoder seed;
    seed.u64(node_index_);
    seed.hash(model_digest);
    seed.f64_list(inputs[i]);
    for (size_t lane = 0; lane < outputs[i].size(); lane++) {
      Encoder e;
      e.fixed(ByteView(seed.data().data(), seed.data().size()));
      e.u64(lane);
      Hash32 h = hash(e.data());
      // First 8 digest bytes -> uniform offset in [-magnitude, +magnitude].
      uint64_t raw = 0;
      for (int b = 0; b < 8; b++) raw = (raw << 8) | h.data[b];
      double unit = static_cast<double>(raw) / 18446744073709551615.0;
      outputs[i][lane] += (2.0 * unit - 1.0) * magnitude_;
    }
  }
  return outputs;
}

}  // namespace credo
