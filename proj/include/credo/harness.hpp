// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic simulation of a full cluster: virtual-time scheduler,
// seeded in-memory network with latency, drops, and partitions, per-node
// fault injection, workload generation, and the post-hoc oracle that
// re-validates every safety claim a run makes. The node logic under test
// is the same coordinator and engine code live deployments run; only the
// Env differs. Identical seeds give byte-identical trace logs.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "credo/coordinator.hpp"
#include "credo/engine.hpp"
#include "credo/env.hpp"
#include "credo/fault.hpp"
#include "credo/proxy.hpp"

namespace credo::harness {

// ---- Virtual time ----

/// Single-threaded event queue over virtual microseconds. Ties run in
/// scheduling order, so equal inputs replay exactly.
class SimScheduler {
 public:
  uint64_t now() const { return now_; }

  uint64_t schedule_at(uint64_t at_us, std::function<void()> fn);
  uint64_t schedule_in(uint64_t delay_us, std::function<void()> fn) {
    return schedule_at(now_ + delay_us, std::move(fn));
  }
  void cancel(uint64_t id);

  /// Runs the earliest event; false when the queue is empty.
  bool run_one();
  /// Runs events up to and including t_us; clock lands on t_us.
  void run_until(uint64_t t_us);
  bool idle() const { return queue_.empty(); }
  size_t pending() const { return queue_.size(); }

 private:
  uint64_t now_ = 0;
  uint64_t next_id_ = 1;
  std::map<std::pair<uint64_t, uint64_t>, std::function<void()>> queue_;
  std::map<uint64_t, uint64_t> at_of_;  // id -> scheduled time
};

// ---- Trace ----

struct TraceEvent {
  uint64_t t_us = 0;
  uint64_t node = 0;  // emitting node; the driver logs as node = n()
  std::string line;

  bool operator==(const TraceEvent&) const = default;
};

class TraceLog {
 public:
  void add(uint64_t t_us, uint64_t node, std::string line) {
    events_.push_back(TraceEvent{t_us, node, std::move(line)});
  }
  const std::vector<TraceEvent>& events() const { return events_; }

  /// Canonical text form, one event per line. Byte-identical across runs
  /// with equal seeds.
  std::string render() const;

 private:
  std::vector<TraceEvent> events_;
};

// ---- Network ----

struct LinkModel {
  uint64_t base_latency_us = 500;
  uint64_t jitter_us = 200;  // uniform [0, jitter_us)
  double drop_probability = 0.0;
};

/// While active, messages with exactly one endpoint in `isolated` drop.
struct Partition {
  uint64_t from_us = 0;
  uint64_t until_us = 0;
  std::set<uint64_t> isolated;
};

struct NetSpec {
  uint64_t seed = 1;
  LinkModel link;
  std::map<std::pair<uint64_t, uint64_t>, LinkModel> overrides;  // (from,to)
  std::vector<Partition> partitions;
};

class SimNet {
 public:
  using Deliver = std::function<void(uint64_t from, const Bytes& frame)>;

  SimNet(SimScheduler* sched, TraceLog* trace, NetSpec spec, uint64_t n_nodes);

  void connect(uint64_t node, Deliver deliver);
  void send(uint64_t from, uint64_t to, Bytes frame);

  uint64_t sent() const { return sent_; }
  uint64_t dropped() const { return dropped_; }

 private:
  const LinkModel& link_for(uint64_t from, uint64_t to) const;
  bool partitioned(uint64_t from, uint64_t to) const;

  SimScheduler* sched_;
  TraceLog* trace_;
  NetSpec spec_;
  std::vector<Deliver> deliver_;
  uint64_t rng_;
  uint64_t sent_ = 0;
  uint64_t dropped_ = 0;
};

// ---- Workload & scenario ----

struct WorkloadSpec {
  uint64_t n_requests = 100;
  double update_fraction = 0.0;  // of n_requests, extra group update ops
  uint64_t n_groups = 1;
  uint64_t models_per_group = 4;
  uint64_t input_dim = 8;
  uint64_t output_dim = 4;
  distance::Metric metric = distance::Metric::euclidean;
  double epsilon = 0.05;
  uint64_t arrival_gap_us = 4'000;
  uint64_t seed = 7;
};

struct ScenarioSpec {
  uint64_t n_nodes = 4;
  uint64_t f = 1;
  Coordinator::Strategy strategy = Coordinator::Strategy::execute_then_agree;
  NetSpec net;
  std::map<uint64_t, FaultSpec> faults;  // node -> injected behavior
  std::set<uint64_t> proxy_discard;      // nodes whose proxies eat requests
  WorkloadSpec workload;
  uint64_t duration_us = 120'000'000;  // virtual horizon
  uint64_t warmup_us = 400'000;        // group setup before requests
  uint64_t client_poll_us = 20'000;
  uint64_t client_retry_us = 6'000'000;  // per-proxy patience
  uint64_t exec_batch_max = 4;
  uint64_t agree_batch_max = 25;
  uint64_t agree_pipeline = 2;
  uint64_t checkpoint_interval = 16;
  uint64_t view_timeout_us = 2'000'000;
  uint64_t flush_interval_us = 2'000;
  double perturb_magnitude = 1e-9;  // honest cross-node numeric noise
  std::optional<ExecCost> exec_cost;  // engine default when absent
  uint64_t seed = 1;
};

/// A full in-process cluster on virtual time. Tests drive it directly;
/// run_scenario layers workload generation and client behavior on top.
class SimCluster {
 public:
  explicit SimCluster(const ScenarioSpec& spec);
  ~SimCluster();

  SimScheduler& scheduler() { return sched_; }
  SimNet& net() { return *net_; }
  TraceLog& trace_log() { return trace_; }
  const ClusterConfig& config() const { return config_; }
  uint64_t n() const { return config_.n(); }

  Coordinator& coordinator(uint64_t i);
  InferenceEngine& engine(uint64_t i);
  ProxyCore& proxy(uint64_t i);
  const std::vector<OrderedSlot>& ordered(uint64_t i) const;

  /// Registers a model file under a mem:// URL for every node's fetcher.
  void add_model_file(const std::string& url, Bytes file);

  /// Client-side fan-out through node `proxy_node`'s proxy: the request is
  /// forwarded to every node as a client frame (subject to network faults
  /// and the proxy_discard set).
  void submit_request_via(uint64_t proxy_node, const InferenceRequest& req);
  void submit_group_op_via(uint64_t proxy_node, const GroupOp& op);

  bool honest(uint64_t i) const {
    auto it = spec_.faults.find(i);
    return it == spec_.faults.end() || it->second.is_honest();
  }

 private:
  struct Node;

  ScenarioSpec spec_;
  SimScheduler sched_;
  TraceLog trace_;
  std::unique_ptr<SimNet> net_;
  ClusterConfig config_;
  std::vector<KeyPair> keys_;
  std::shared_ptr<std::map<std::string, Bytes>> model_store_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

struct RequestRecord {
  InferenceRequest request;
  uint64_t submitted_at_us = 0;
  uint64_t certified_at_us = 0;  // 0 when never certified
  uint64_t proxies_tried = 1;
  bool verified = false;
  std::optional<InferenceResponse> response;
};

struct GroupOpRecord {
  GroupOp op;
  std::optional<GroupOpAck> ack;
};

struct ScenarioResult {
  ClusterConfig config;
  std::string trace;  // rendered log; determinism target
  std::vector<RequestRecord> requests;
  std::vector<GroupOpRecord> group_ops;
  // Per node, post-run:
  std::vector<std::vector<OrderedSlot>> ordered;
  std::vector<std::vector<std::pair<uint64_t, Hash32>>> ordered_log;
  std::vector<uint64_t> view_changes;
  std::vector<uint64_t> views;
  std::vector<uint64_t> last_stable;
  std::vector<bool> honest;
  bool deadlocked = false;
  uint64_t finished_at_us = 0;
  uint64_t net_sent = 0;
  uint64_t net_dropped = 0;

  uint64_t certified() const {
    uint64_t k = 0;
    for (const auto& r : requests) k += r.verified ? 1 : 0;
    return k;
  }
};

/// Generates the workload, runs the cluster until every request resolves
/// or the horizon passes, and snapshots everything the oracle needs.
ScenarioResult run_scenario(const ScenarioSpec& spec);

/// Post-hoc safety oracle. Returns human-readable violations; empty means
/// the run upheld every checked invariant:
///   - honest nodes' ordered logs are prefixes of one another;
///   - every verified response re-verifies against the cluster keys;
///   - every covered result was inside a satisfied honest attestor quorum;
///   - every covered result carries more than f distinct attestors;
///   - replaying each honest log shows every ok request op executed the
///     version active at its sequence number, and certified results carry
///     exactly that version.
std::vector<std::string> check_invariants(const ScenarioResult& result);

// ---- Benchmarks & experiments ----

struct BenchSpec {
  uint64_t n_nodes = 4;
  uint64_t f = 1;
  uint64_t n_requests = 160;
  uint64_t arrival_gap_us = 1'000;
  uint64_t exec_batch_max = 4;
  uint64_t agree_batch_max = 8;
  uint64_t agree_pipeline = 2;
  std::optional<ExecCost> exec_cost;  // engine default when absent
  uint64_t seed = 11;
};

struct BenchReport {
  double execute_agree_attest_tps = 0.0;
  double agree_execute_tps = 0.0;
  uint64_t execute_agree_attest_span_us = 0;
  uint64_t agree_execute_span_us = 0;
  uint64_t n_requests = 0;
  bool all_certified = false;
};

/// Runs the identical workload under both batching strategies and reports
/// virtual-time throughput for each.
BenchReport bench_strategies(const BenchSpec& spec);

struct AccuracyReport {
  std::vector<double> per_model_accuracy;  // measured, honest run
  double best_single = 0.0;
  double worst_single = 0.0;
  double honest_ensemble = 0.0;
  // One model shifted beyond epsilon:
  double beyond_excluded_fraction = 0.0;  // trials where it left the quorum
  double beyond_ensemble = 0.0;
  // f models steering worst-case within epsilon:
  double within_ensemble = 0.0;
  uint64_t trials = 0;
};

/// Monte-Carlo study of ensemble accuracy on a synthetic classification
/// task: group_size models of staggered single-model accuracy vote through
/// the distance-quorum rule (label with highest confidence agreed by more
/// than f models).
AccuracyReport accuracy_experiment(uint64_t group_size, uint64_t f_dishonest,
                                   double epsilon, uint64_t trials,
                                   uint64_t seed);

// ---- Workload materialization helpers (shared with the CLI) ----

struct GeneratedGroup {
  std::string group_id;
  GroupDefinition definition;
  std::vector<std::pair<std::string, Bytes>> model_files;  // url -> bytes
};

/// Deterministic model group: `count` near-identical linear models whose
/// output spread stays well inside epsilon for inputs in [-1, 1].
GeneratedGroup generate_group(const std::string& group_id,
                              const WorkloadSpec& workload, uint64_t salt);

}  // namespace credo::harness
