// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "credo/distance.hpp"
#include "oracle_helpers.hpp"

using namespace credo;
using namespace credo::distance;
using credo::testing::Rng;

namespace {

// Independent exhaustive oracle: enumerates subsets via sorted index
// combinations (next_permutation over selector masks) and computes each
// diameter with the public diameter() on materialized vectors. Applies the
// documented order: size desc, diameter asc, index tuple asc.
struct OracleOutcome {
  std::set<uint64_t> selected;
  double diam = 0.0;
  bool satisfied = false;
};

OracleOutcome oracle_select(const std::map<uint64_t, std::vector<double>>& results,
                            uint64_t n, uint64_t f, Metric metric,
                            double epsilon) {
  std::vector<uint64_t> nodes;
  for (const auto& [k, v] : results) nodes.push_back(k);
  const size_t m = nodes.size();
  const uint64_t need = n - f;

  OracleOutcome best;
  bool have = false;
  std::vector<uint64_t> best_tuple;
  for (size_t k = m; k + 1 > need; k--) {  // sizes m down to need
    std::vector<bool> pick(m, false);
    std::fill(pick.begin(), pick.begin() + k, true);
    // prev_permutation over the selector enumerates all C(m, k) choices.
    do {
      std::vector<uint64_t> tuple;
      std::vector<std::vector<double>> vecs;
      for (size_t i = 0; i < m; i++) {
        if (pick[i]) {
          tuple.push_back(nodes[i]);
          vecs.push_back(results.at(nodes[i]));
        }
      }
      double diam = diameter(metric, vecs);
      if (diam > epsilon) continue;
      bool wins = false;
      if (!have) {
        wins = true;
      } else if (tuple.size() != best_tuple.size()) {
        wins = tuple.size() > best_tuple.size();
      } else if (diam != best.diam) {
        wins = diam < best.diam;
      } else {
        wins = tuple < best_tuple;
      }
      if (wins) {
        have = true;
        best_tuple = tuple;
        best.diam = diam;
        best.selected = std::set<uint64_t>(tuple.begin(), tuple.end());
        best.satisfied = true;
      }
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  if (!have) {
    best.satisfied = false;
    best.selected.clear();
    best.diam = 0.0;
  }
  return best;
}

std::map<uint64_t, std::vector<double>> scalars(
    std::initializer_list<std::pair<uint64_t, double>> xs) {
  std::map<uint64_t, std::vector<double>> out;
  for (auto& [k, v] : xs) out[k] = {v};
  return out;
}

}  // namespace

TEST_CASE("delta: 3-4-5 triangle, identity, chebyshev") {
  CHECK(delta(Metric::euclidean, {0, 0}, {3, 4}) == doctest::Approx(5.0));
  CHECK(delta(Metric::euclidean, {1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(delta(Metric::chebyshev, {1, 2}, {4, 0}) == doctest::Approx(3.0));
  CHECK(delta(Metric::max_minus_min, {1.5}, {1.2}) == doctest::Approx(0.3));
}

TEST_CASE("delta rejects mismatched or empty vectors") {
  CHECK_THROWS_AS(delta(Metric::euclidean, {1, 2}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(delta(Metric::euclidean, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(delta(Metric::max_minus_min, {1, 2}, {3, 4}),
                  std::invalid_argument);
}

TEST_CASE("delta is symmetric and nonnegative on random vectors") {
  Rng rng(0xd1570001);
  for (int trial = 0; trial < 1000; trial++) {
    auto x = rng.vec(4, -10, 10);
    auto y = rng.vec(4, -10, 10);
    for (Metric m : {Metric::euclidean, Metric::chebyshev}) {
      double d1 = delta(m, x, y);
      CHECK(d1 >= 0.0);
      CHECK(d1 == delta(m, y, x));
    }
  }
}

TEST_CASE("diameter: singleton, scalar gaps, pairwise oracle") {
  CHECK(diameter(Metric::euclidean, {{42.0}}) == 0.0);
  CHECK(diameter(Metric::euclidean, {{1.0}, {1.3}, {1.1}}) ==
        doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(diameter(Metric::euclidean, {}), std::invalid_argument);

  Rng rng(0xd1570002);
  for (int trial = 0; trial < 200; trial++) {
    std::vector<std::vector<double>> vecs;
    for (int i = 0; i < 6; i++) vecs.push_back(rng.vec(4, -5, 5));
    double worst = 0.0;
    for (size_t i = 0; i < vecs.size(); i++) {
      for (size_t j = 0; j < vecs.size(); j++) {
        if (i != j) worst = std::max(worst, delta(Metric::euclidean, vecs[i], vecs[j]));
      }
    }
    CHECK(diameter(Metric::euclidean, vecs) == doctest::Approx(worst));
  }
}

TEST_CASE("select_quorum: pinned examples") {
  auto r1 = scalars({{0, 1.00}, {1, 1.01}, {2, 1.02}, {3, 5.0}});
  auto out1 = select_quorum(r1, 4, 1, Metric::euclidean, 0.2);
  CHECK(out1.satisfied);
  CHECK(out1.selected == std::set<uint64_t>{0, 1, 2});

  auto r2 = scalars({{0, 2.0}, {1, 2.0}, {2, 2.0}, {3, 2.0}});
  auto out2 = select_quorum(r2, 4, 1, Metric::euclidean, 0.0);
  CHECK(out2.satisfied);
  CHECK(out2.selected == std::set<uint64_t>{0, 1, 2, 3});
  CHECK(out2.diameter == 0.0);

  auto r3 = scalars({{0, 1.0}, {1, 1.5}, {2, 2.0}, {3, 2.5}});
  auto out3 = select_quorum(r3, 4, 1, Metric::euclidean, 0.2);
  CHECK_FALSE(out3.satisfied);
  CHECK(out3.selected.empty());
}

TEST_CASE("fewer than N-f results is an error, not an unsatisfied outcome") {
  auto r = scalars({{0, 1.0}, {1, 1.0}});
  CHECK_THROWS_AS(select_quorum(r, 4, 1, Metric::euclidean, 1.0),
                  std::invalid_argument);
}

TEST_CASE("matches the exhaustive oracle, 1e3 random instances, N<=8") {
  Rng rng(0xd1570003);
  for (int trial = 0; trial < 1000; trial++) {
    uint64_t n = 4 + rng.below(5);  // 4..8
    uint64_t f = (n - 1) / 3;
    uint64_t present = (n - f) + rng.below(f + 1);
    size_t dim = rng.chance(0.5) ? 1 : 4;
    // Cluster most results near a center so qualifying subsets exist often.
    std::map<uint64_t, std::vector<double>> results;
    std::vector<uint64_t> ids(n);
    for (uint64_t i = 0; i < n; i++) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng.gen);
    auto center = rng.vec(dim, -1, 1);
    for (uint64_t i = 0; i < present; i++) {
      std::vector<double> v(dim);
      double spread = rng.chance(0.3) ? 5.0 : 0.05;
      for (size_t j = 0; j < dim; j++) {
        v[j] = center[j] + rng.real(-spread, spread);
      }
      results[ids[i]] = v;
    }
    double eps = rng.real(0.0, 0.3);
    auto got = select_quorum(results, n, f, Metric::euclidean, eps);
    auto want = oracle_select(results, n, f, Metric::euclidean, eps);
    CHECK(got.satisfied == want.satisfied);
    CHECK(got.selected == want.selected);
    if (got.satisfied) CHECK(got.diameter == doctest::Approx(want.diam));
  }
}

TEST_CASE("shrinking epsilon never grows the selection") {
  Rng rng(0xd1570004);
  for (int trial = 0; trial < 300; trial++) {
    std::map<uint64_t, std::vector<double>> results;
    for (uint64_t i = 0; i < 7; i++) results[i] = rng.vec(1, 0, 1);
    double eps_hi = rng.real(0.1, 1.0);
    double eps_lo = eps_hi * rng.real(0.0, 1.0);
    auto hi = select_quorum(results, 7, 2, Metric::euclidean, eps_hi);
    auto lo = select_quorum(results, 7, 2, Metric::euclidean, eps_lo);
    CHECK(lo.selected.size() <= hi.selected.size());
  }
}

TEST_CASE("a far-away extra result never disturbs qualification") {
  Rng rng(0xd1570005);
  for (int trial = 0; trial < 300; trial++) {
    std::map<uint64_t, std::vector<double>> results;
    for (uint64_t i = 0; i < 3; i++) {
      results[i] = {1.0 + rng.real(-0.01, 0.01)};
    }
    auto base = select_quorum(results, 4, 1, Metric::euclidean, 0.1);
    REQUIRE(base.satisfied);
    results[3] = {1000.0 + rng.real(0, 10)};  // beyond eps from everything
    auto with_outlier = select_quorum(results, 4, 1, Metric::euclidean, 0.1);
    CHECK(with_outlier.satisfied == base.satisfied);
    CHECK(with_outlier.selected == base.selected);
  }
}

TEST_CASE("descriptor text form round-trips") {
  DistanceDescriptor d{Metric::chebyshev, 0.25};
  auto back = DistanceDescriptor::from_text(d.to_text());
  REQUIRE(back.has_value());
  CHECK(*back == d);

  CHECK(DistanceDescriptor::from_text("euclidean:0.2").has_value());
  CHECK_FALSE(DistanceDescriptor::from_text("euclidean").has_value());
  CHECK_FALSE(DistanceDescriptor::from_text("mahalanobis:0.2").has_value());
  CHECK_FALSE(DistanceDescriptor::from_text("euclidean:-1").has_value());
  CHECK_FALSE(DistanceDescriptor::from_text("euclidean:nope").has_value());
}

TEST_CASE("descriptor canonical encoding round-trips") {
  Rng rng(0xd1570006);
  for (int trial = 0; trial < 100; trial++) {
    DistanceDescriptor d{static_cast<Metric>(rng.below(3)), rng.real(0, 10)};
    Encoder e;
    d.encode(e);
    Decoder dec(e.data());
    CHECK(DistanceDescriptor::decode(dec) == d);
    CHECK(dec.done());
  }
}
