// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "credo/harness.hpp"
#include "oracle_helpers.hpp"

using namespace credo;
using namespace credo::harness;
using credo::testing::Rng;

namespace {

ScenarioSpec small_spec() {
  ScenarioSpec spec;
  spec.workload.n_requests = 8;
  spec.workload.input_dim = 4;
  spec.workload.output_dim = 3;
  spec.workload.models_per_group = 4;
  spec.workload.arrival_gap_us = 3'000;
  spec.duration_us = 120'000'000;
  return spec;
}

void print_violations(const std::vector<std::string>& violations) {
  for (const std::string& v : violations) MESSAGE(v);
}

}  // namespace

// ---- virtual time ----

TEST_CASE("the scheduler runs events in time order, ties by insertion") {
  SimScheduler sched;
  std::vector<int> order;
  sched.schedule_at(50, [&] { order.push_back(3); });
  sched.schedule_at(10, [&] { order.push_back(1); });
  sched.schedule_at(10, [&] { order.push_back(2); });
  uint64_t dead = sched.schedule_at(40, [&] { order.push_back(99); });
  sched.cancel(dead);
  while (sched.run_one()) {
  }
  CHECK(order == std::vector<int>{1, 2, 3});
  CHECK(sched.now() == 50);

  // run_until lands the clock on the target even with nothing scheduled.
  sched.run_until(200);
  CHECK(sched.now() == 200);
  CHECK(sched.idle());

  // Scheduling in the past clamps to now.
  bool ran = false;
  sched.schedule_at(5, [&] { ran = true; });
  CHECK(sched.run_one());
  CHECK(ran);
  CHECK(sched.now() == 200);
}

TEST_CASE("events scheduled while running interleave correctly") {
  SimScheduler sched;
  std::vector<std::string> log;
  sched.schedule_at(10, [&] {
    log.push_back("a");
    sched.schedule_in(5, [&] { log.push_back("a+5"); });
  });
  sched.schedule_at(12, [&] { log.push_back("b"); });
  while (sched.run_one()) {
  }
  CHECK(log == std::vector<std::string>{"a", "b", "a+5"});
  CHECK(sched.now() == 15);
}

// ---- trace ----

TEST_CASE("trace lines render in a fixed-width canonical form") {
  TraceLog log;
  log.add(5, 3, "hello");
  log.add(1'234'567, 12, "view=2");
  CHECK(log.render() == "000000000005 n03 hello\n000001234567 n12 view=2\n");
}

// ---- network ----

TEST_CASE("the network delivers within the link's latency envelope") {
  SimScheduler sched;
  TraceLog trace;
  NetSpec spec;
  spec.link.base_latency_us = 100;
  spec.link.jitter_us = 50;
  SimNet net(&sched, &trace, spec, 2);
  std::vector<uint64_t> arrivals;
  net.connect(0, [&](uint64_t, const Bytes&) {});
  net.connect(1, [&](uint64_t from, const Bytes& frame) {
    CHECK(from == 0);
    CHECK(frame == Bytes{0xAA});
    arrivals.push_back(sched.now());
  });
  for (int i = 0; i < 20; i++) net.send(0, 1, Bytes{0xAA});
  while (sched.run_one()) {
  }
  REQUIRE(arrivals.size() == 20);
  for (uint64_t t : arrivals) {
    CHECK(t >= 100);
    CHECK(t < 150);
  }
  CHECK(net.sent() == 20);
  CHECK(net.dropped() == 0);
}

TEST_CASE("lossy links drop and count") {
  SimScheduler sched;
  TraceLog trace;
  NetSpec spec;
  spec.link.drop_probability = 1.0;
  SimNet net(&sched, &trace, spec, 2);
  size_t delivered = 0;
  net.connect(0, [&](uint64_t, const Bytes&) { delivered++; });
  net.connect(1, [&](uint64_t, const Bytes&) { delivered++; });
  for (int i = 0; i < 10; i++) net.send(0, 1, Bytes{1});
  while (sched.run_one()) {
  }
  CHECK(delivered == 0);
  CHECK(net.dropped() == 10);
}

TEST_CASE("partitions isolate exactly the named nodes for their window") {
  SimScheduler sched;
  TraceLog trace;
  NetSpec spec;
  spec.link.base_latency_us = 10;
  spec.link.jitter_us = 0;
  Partition p;
  p.from_us = 1'000;
  p.until_us = 2'000;
  p.isolated = {0};
  spec.partitions.push_back(p);
  SimNet net(&sched, &trace, spec, 3);
  size_t to1 = 0, to2 = 0;
  net.connect(0, [&](uint64_t, const Bytes&) {});
  net.connect(1, [&](uint64_t, const Bytes&) { to1++; });
  net.connect(2, [&](uint64_t, const Bytes&) { to2++; });

  // Before the window: 0 -> 1 flows.
  net.send(0, 1, Bytes{1});
  sched.run_until(500);
  CHECK(to1 == 1);

  // Inside the window: 0 -> 1 drops, 2 -> 1 still flows (both outside).
  sched.schedule_at(1'500, [&] {
    net.send(0, 1, Bytes{2});
    net.send(2, 1, Bytes{3});
  });
  sched.run_until(1'800);
  CHECK(to1 == 2);

  // After the window: 0 -> 2 flows again.
  sched.schedule_at(2'500, [&] { net.send(0, 2, Bytes{4}); });
  sched.run_until(3'000);
  CHECK(to2 == 1);
  CHECK(net.dropped() == 1);
}

// ---- workload generation ----

TEST_CASE("generated model groups stay far inside epsilon of each other") {
  WorkloadSpec workload;
  workload.input_dim = 6;
  workload.output_dim = 4;
  workload.models_per_group = 7;
  workload.epsilon = 0.05;
  GeneratedGroup gen = generate_group("g", workload, 3);
  REQUIRE(gen.definition.models.size() == 7);
  REQUIRE(gen.model_files.size() == 7);

  std::vector<LinearToyModel> models;
  for (const auto& [url, file] : gen.model_files) {
    models.push_back(
        LinearToyModel::from_file_bytes(ByteView(file.data(), file.size())));
  }
  // The descriptor digests bind exactly the staged files.
  for (size_t m = 0; m < models.size(); m++) {
    CHECK(gen.definition.models[m].weights_digest == models[m].digest());
  }

  Rng rng(71);
  double worst = 0.0;
  for (int trial = 0; trial < 50; trial++) {
    std::vector<double> x = rng.vec(workload.input_dim, -1, 1);
    for (size_t a = 0; a < models.size(); a++) {
      for (size_t b = a + 1; b < models.size(); b++) {
        std::vector<double> ya = models[a].run(x);
        std::vector<double> yb = models[b].run(x);
        double d2 = 0;
        for (size_t k = 0; k < ya.size(); k++) {
          d2 += (ya[k] - yb[k]) * (ya[k] - yb[k]);
        }
        worst = std::max(worst, std::sqrt(d2));
      }
    }
  }
  CHECK(worst < workload.epsilon / 2);
  CHECK(worst > 0.0);

  // A different salt yields different files under different urls.
  GeneratedGroup v2 = generate_group("g", workload, 4);
  CHECK(v2.model_files[0].first != gen.model_files[0].first);
  CHECK(v2.model_files[0].second != gen.model_files[0].second);
}

// ---- scenarios ----

TEST_CASE("equal seeds replay byte-identical runs") {
  ScenarioSpec spec = small_spec();
  spec.workload.n_requests = 5;
  ScenarioResult a = run_scenario(spec);
  ScenarioResult b = run_scenario(spec);
  CHECK(a.trace == b.trace);
  CHECK(a.certified() == b.certified());
  CHECK(a.finished_at_us == b.finished_at_us);
  CHECK(a.net_sent == b.net_sent);

  ScenarioSpec other = spec;
  other.seed = spec.seed + 1;
  ScenarioResult c = run_scenario(other);
  CHECK(a.trace != c.trace);
}

TEST_CASE("an honest run certifies everything and satisfies the oracle") {
  ScenarioSpec spec = small_spec();
  ScenarioResult result = run_scenario(spec);
  CHECK_FALSE(result.deadlocked);
  CHECK(result.certified() == spec.workload.n_requests);
  for (const RequestRecord& r : result.requests) {
    CHECK(r.verified);
    REQUIRE(r.response.has_value());
    CHECK(r.response->kind == InferenceResponse::Kind::success);
    CHECK(r.certified_at_us >= r.submitted_at_us);
  }
  for (uint64_t v : result.views) CHECK(v == 0);
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("both strategies pass the oracle on the same workload") {
  ScenarioSpec spec = small_spec();
  spec.strategy = Coordinator::Strategy::agree_then_execute;
  ScenarioResult result = run_scenario(spec);
  CHECK_FALSE(result.deadlocked);
  CHECK(result.certified() == spec.workload.n_requests);
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("a node corrupting results beyond epsilon is never covered") {
  ScenarioSpec spec = small_spec();
  spec.faults[2].behavior = FaultSpec::Behavior::corrupt_result;
  spec.faults[2].magnitude = 1.0;  // epsilon is 0.05
  ScenarioResult result = run_scenario(spec);
  CHECK_FALSE(result.deadlocked);
  CHECK(result.certified() == spec.workload.n_requests);
  for (const RequestRecord& r : result.requests) {
    REQUIRE(r.response.has_value());
    REQUIRE(r.response->kind == InferenceResponse::Kind::success);
    for (const InferenceResult& res : r.response->results) {
      CHECK(res.node_index != 2);
    }
  }
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("a corruption within epsilon stays covered") {
  ScenarioSpec spec = small_spec();
  spec.faults[2].behavior = FaultSpec::Behavior::corrupt_result;
  spec.faults[2].magnitude = 1e-4;  // far under epsilon across 3 lanes
  ScenarioResult result = run_scenario(spec);
  CHECK(result.certified() == spec.workload.n_requests);
  size_t covered_by_2 = 0;
  for (const RequestRecord& r : result.requests) {
    for (const InferenceResult& res : r.response->results) {
      if (res.node_index == 2) covered_by_2++;
    }
  }
  CHECK(covered_by_2 == result.requests.size());
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("clients route around a proxy that eats submissions") {
  ScenarioSpec spec = small_spec();
  spec.workload.n_requests = 4;
  spec.proxy_discard = {0};
  ScenarioResult result = run_scenario(spec);
  CHECK_FALSE(result.deadlocked);
  CHECK(result.certified() == spec.workload.n_requests);
  bool some_retried = false;
  for (const RequestRecord& r : result.requests) {
    if (r.proxies_tried > 1) some_retried = true;
    CHECK(r.proxies_tried <= 2);  // f + 1 proxies is the budget
  }
  CHECK(some_retried);
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("group updates interleave with requests and stay serializable") {
  ScenarioSpec spec = small_spec();
  spec.workload.n_requests = 10;
  spec.workload.update_fraction = 0.3;
  spec.workload.n_groups = 2;
  ScenarioResult result = run_scenario(spec);
  CHECK_FALSE(result.deadlocked);
  CHECK(result.certified() == spec.workload.n_requests);
  CHECK(result.group_ops.size() >= 4 + 6);  // setup chains + 3 update chains
  for (const GroupOpRecord& g : result.group_ops) {
    REQUIRE(g.ack.has_value());
    CHECK(g.ack->status == OpStatus::ok);
  }
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("more faults than f deadlock and the harness says so") {
  ScenarioSpec spec = small_spec();
  spec.workload.n_requests = 3;
  spec.faults[1].behavior = FaultSpec::Behavior::bad_signature;
  spec.faults[2].behavior = FaultSpec::Behavior::bad_signature;
  spec.duration_us = 30'000'000;
  ScenarioResult result = run_scenario(spec);
  CHECK(result.deadlocked);
  CHECK(result.certified() == 0);
  // Nothing certified means nothing to contradict the oracle.
  auto violations = check_invariants(result);
  print_violations(violations);
  CHECK(violations.empty());
}

TEST_CASE("the oracle rejects a doctored result") {
  ScenarioSpec spec = small_spec();
  spec.workload.n_requests = 3;
  ScenarioResult result = run_scenario(spec);
  REQUIRE(result.certified() == 3);
  // Tamper with a verified response after the fact: re-verification fails.
  result.requests[0].response->results[0].output[0] += 1.0;
  auto violations = check_invariants(result);
  CHECK_FALSE(violations.empty());
}
