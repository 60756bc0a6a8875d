// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Result-distance metrics, result-set diameter, and trustworthy-subset
// selection. select_quorum picks the largest subset of at least N-f node
// results whose diameter stays within the similarity threshold; ties go
// to the smaller diameter, then the lexicographically smallest sorted
// index tuple, so every honest node lands on the same subset.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "credo/codec.hpp"

namespace credo::distance {

enum class Metric : uint8_t {
  euclidean = 0,
  max_minus_min = 1,
  chebyshev = 2,
};

std::optional<Metric> metric_from_name(const std::string& name);
std::string metric_name(Metric m);

struct DistanceDescriptor {
  Metric metric = Metric::euclidean;
  double default_epsilon = 0.0;  // must be >= 0

  bool operator==(const DistanceDescriptor&) const = default;

  void encode(Encoder& e) const;
  static DistanceDescriptor decode(Decoder& d);

  /// Canonical text form "metric:epsilon", e.g. "euclidean:0.25".
  std::string to_text() const;
  static std::optional<DistanceDescriptor> from_text(const std::string& text);
};

/// Pairwise distance under the metric. Throws std::invalid_argument on a
/// length mismatch or empty vectors.
double delta(Metric metric, const std::vector<double>& x,
             const std::vector<double>& y);

/// Maximum pairwise delta over the set; a singleton has diameter 0.
/// Throws std::invalid_argument on an empty set.
double diameter(Metric metric, const std::vector<std::vector<double>>& results);

struct AgreementOutcome {
  std::set<uint64_t> selected;  // node indices in Q
  double diameter = 0.0;        // over the selected set
  bool satisfied = false;       // |selected| >= N - f
};

/// Selects the trustworthy subset among the present per-node results.
/// Requires at least N-f results to be present (throws std::invalid_argument
/// otherwise; that is a caller error, distinct from an unsatisfied quorum,
/// which returns satisfied = false and an empty selection).
AgreementOutcome select_quorum(
    const std::map<uint64_t, std::vector<double>>& results, uint64_t n_nodes,
    uint64_t f, Metric metric, double epsilon);

}  // namespace credo::distance
