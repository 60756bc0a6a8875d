// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/distance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace credo::distance {

std::optional<Metric> metric_from_name(const std::string& name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "max_minus_min") return Metric::max_minus_min;
  if (name == "chebyshev") return Metric::chebyshev;
  return std::nullopt;
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::euclidean: return "euclidean";
    case Metric::max_minus_min: return "max_minus_min";
    case Metric::chebyshev: return "chebyshev";
  }
  return "unknown";
}

void DistanceDescriptor::encode(Encoder& e) const {
  e.u8(static_cast<uint8_t>(metric));
  e.f64(default_epsilon);
}

DistanceDescriptor DistanceDescriptor::decode(Decoder& d) {
  DistanceDescriptor out;
  uint8_t m = d.u8();
  if (m > static_cast<uint8_t>(Metric::chebyshev)) {
    throw CodecError("unknown distance metric tag");
  }
  out.metric = static_cast<Metric>(m);
  out.default_epsilon = d.f64();
  if (!(out.default_epsilon >= 0.0)) {
    throw CodecError("negative or NaN epsilon");
  }
  return out;
}

std::string DistanceDescriptor::to_text() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", default_epsilon);
  return metric_name(metric) + ":" + buf;
}

std::optional<DistanceDescriptor> DistanceDescriptor::from_text(
    const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) return std::nullopt;
  auto metric = metric_from_name(text.substr(0, colon));
  if (!metric) return std::nullopt;
  const std::string eps_str = text.substr(colon + 1);
  if (eps_str.empty()) return std::nullopt;
  char* end = nullptr;
  double eps = std::strtod(eps_str.c_str(), &end);
  if (end != eps_str.c_str() + eps_str.size()) return std::nullopt;
  if (!(eps >= 0.0) || !std::isfinite(eps)) return std::nullopt;
  return DistanceDescriptor{*metric, eps};
}

double delta(Metric metric, const std::vector<double>& x,
             const std::vector<double>& y) {
  if (x.empty() || y.empty()) {
    throw std::invalid_argument("delta: empty result vector");
  }
  if (x.size() != y.size()) {
    throw std::invalid_argument("delta: result dimensionality mismatch");
  }
  switch (metric) {
    case Metric::euclidean: {
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); i++) {
        double d = x[i] - y[i];
        acc += d * d;
      }
      return std::sqrt(acc);
    }
    case Metric::max_minus_min: {
      // Defined on scalar results: |x0 - y0|.
      if (x.size() != 1) {
        throw std::invalid_argument("max_minus_min: scalar results only");
      }
      return std::fabs(x[0] - y[0]);
    }
    case Metric::chebyshev: {
      double worst = 0.0;
      for (size_t i = 0; i < x.size(); i++) {
        worst = std::max(worst, std::fabs(x[i] - y[i]));
      }
      return worst;
    }
  }
  throw std::invalid_argument("delta: unknown metric");
}

double diameter(Metric metric,
                const std::vector<std::vector<double>>& results) {
  if (results.empty()) {
    throw std::invalid_argument("diameter: empty result set");
  }
  double worst = 0.0;
  for (size_t i = 0; i < results.size(); i++) {
    for (size_t j = i + 1; j < results.size(); j++) {
      worst = std::max(worst, delta(metric, results[i], results[j]));
    }
  }
  return worst;
}

namespace {

struct Candidate {
  std::vector<uint64_t> indices;  // sorted ascending
  double diam = 0.0;
};

// True when a beats b under the selection order: larger size first, then
// smaller diameter, then lexicographically smaller sorted index tuple.
bool better(const Candidate& a, const Candidate& b) {
  if (a.indices.size() != b.indices.size()) {
    return a.indices.size() > b.indices.size();
  }
  if (a.diam != b.diam) return a.diam < b.diam;
  return a.indices < b.indices;
}

}  // namespace

AgreementOutcome select_quorum(
    const std::map<uint64_t, std::vector<double>>& results, uint64_t n_nodes,
    uint64_t f, Metric metric, double epsilon) {
  if (n_nodes == 0 || f >= n_nodes) {
    throw std::invalid_argument("select_quorum: bad n/f");
  }
  const uint64_t need = n_nodes - f;
  if (results.size() < need) {
    throw std::invalid_argument(
        "select_quorum: fewer than N-f results present");
  }
  for (const auto& [idx, vec] : results) {
    if (idx >= n_nodes) {
      throw std::invalid_argument("select_quorum: node index out of range");
    }
    if (vec.empty()) {
      throw std::invalid_argument("select_quorum: empty result vector");
    }
  }

  std::vector<uint64_t> nodes;
  nodes.reserve(results.size());
  for (const auto& [idx, vec] : results) nodes.push_back(idx);
  const size_t m = nodes.size();
  // Deployments stay small (N <= 16), which keeps the subset scan cheap.
  if (m > 20) {
    throw std::invalid_argument("select_quorum: too many results");
  }

  // Pairwise distances once; subsets reuse them.
  std::vector<std::vector<double>> dist(m, std::vector<double>(m, 0.0));
  for (size_t i = 0; i < m; i++) {
    for (size_t j = i + 1; j < m; j++) {
      dist[i][j] = dist[j][i] =
          delta(metric, results.at(nodes[i]), results.at(nodes[j]));
    }
  }

  // Exhaustive subset scan. The result-set size is the cluster size, which
  // the deployment model keeps small (tens of nodes at most), and only
  // subsets of at least N-f members qualify.
  std::optional<Candidate> best;
  const uint64_t limit = uint64_t{1} << m;
  for (uint64_t mask = 1; mask < limit; mask++) {
    const auto size = static_cast<size_t>(__builtin_popcountll(mask));
    if (size < need) continue;
    double diam = 0.0;
    bool ok = true;
    for (size_t i = 0; i < m && ok; i++) {
      if (!(mask & (uint64_t{1} << i))) continue;
      for (size_t j = i + 1; j < m; j++) {
        if (!(mask & (uint64_t{1} << j))) continue;
        diam = std::max(diam, dist[i][j]);
        if (diam > epsilon) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    Candidate cand;
    cand.diam = diam;
    cand.indices.reserve(size);
    for (size_t i = 0; i < m; i++) {
      if (mask & (uint64_t{1} << i)) cand.indices.push_back(nodes[i]);
    }
    if (!best || better(cand, *best)) best = std::move(cand);
  }

  AgreementOutcome out;
  if (!best) {
    out.satisfied = false;
    return out;
  }
  out.satisfied = true;
  out.diameter = best->diam;
  out.selected.insert(best->indices.begin(), best->indices.end());
  return out;
}

}  // namespace credo::distance
