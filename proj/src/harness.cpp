// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <random>

#include "credo/certificate.hpp"
#include "credo/model.hpp"
#include "credo/state.hpp"

namespace credo::harness {

// ---- SimScheduler ----

uint64_t SimScheduler::schedule_at(uint64_t at_us, std::function<void()> fn) {
  if (at_us < now_) at_us = now_;
  uint64_t id = next_id_++;
  queue_.emplace(std::make_pair(at_us, id), std::move(fn));
  at_of_.emplace(id, at_us);
  return id;
}

void SimScheduler::cancel(uint64_t id) {
  auto it = at_of_.find(id);
  if (it == at_of_.end()) return;
  queue_.erase(std::make_pair(it->second, id));
  at_of_.erase(it);
}

bool SimScheduler::run_one() {
  if (queue_.empty()) return false;
  auto it = queue_.begin();
  now_ = it->first.first;
  uint64_t id = it->first.second;
  std::function<void()> fn = std::move(it->second);
  queue_.erase(it);
  at_of_.erase(id);
  fn();
  return true;
}

void SimScheduler::run_until(uint64_t t_us) {
  while (!queue_.empty() && queue_.begin()->first.first <= t_us) run_one();
  if (now_ < t_us) now_ = t_us;
}

// ---- TraceLog ----

std::string TraceLog::render() const {
  std::string out;
  out.reserve(events_.size() * 48);
  char head[48];
  for (const TraceEvent& ev : events_) {
    std::snprintf(head, sizeof(head), "%012" PRIu64 " n%02" PRIu64 " ",
                  ev.t_us, ev.node);
    out += head;
    out += ev.line;
    out += '\n';
  }
  return out;
}

// ---- SimNet ----

namespace {

uint64_t xorshift64(uint64_t& s) {
  s ^= s << 13;
  s ^= s >> 7;
  s ^= s << 17;
  return s;
}

double unit_real(uint64_t& s) {
  return static_cast<double>(xorshift64(s) >> 11) * 0x1.0p-53;
}

}  // namespace

SimNet::SimNet(SimScheduler* sched, TraceLog* trace, NetSpec spec,
               uint64_t n_nodes)
    : sched_(sched),
      trace_(trace),
      spec_(std::move(spec)),
      deliver_(n_nodes),
      rng_(spec_.seed ? spec_.seed : 0x9E3779B97F4A7C15ULL) {}

void SimNet::connect(uint64_t node, Deliver deliver) {
  deliver_[node] = std::move(deliver);
}

const LinkModel& SimNet::link_for(uint64_t from, uint64_t to) const {
  auto it = spec_.overrides.find(std::make_pair(from, to));
  return it == spec_.overrides.end() ? spec_.link : it->second;
}

bool SimNet::partitioned(uint64_t from, uint64_t to) const {
  uint64_t now = sched_->now();
  for (const Partition& p : spec_.partitions) {
    if (now < p.from_us || now >= p.until_us) continue;
    bool a = p.isolated.count(from) > 0;
    bool b = p.isolated.count(to) > 0;
    if (a != b) return true;
  }
  return false;
}

void SimNet::send(uint64_t from, uint64_t to, Bytes frame) {
  sent_++;
  if (to >= deliver_.size() || !deliver_[to]) {
    dropped_++;
    return;
  }
  const LinkModel& link = link_for(from, to);
  if (partitioned(from, to)) {
    dropped_++;
    trace_->add(sched_->now(), from, "netdrop partition to=" +
                                         std::to_string(to));
    return;
  }
  if (link.drop_probability > 0.0 && unit_real(rng_) < link.drop_probability) {
    dropped_++;
    trace_->add(sched_->now(), from, "netdrop loss to=" + std::to_string(to));
    return;
  }
  uint64_t delay = link.base_latency_us;
  if (link.jitter_us > 0) delay += xorshift64(rng_) % link.jitter_us;
  sched_->schedule_in(delay,
                      [this, from, to, f = std::move(frame)]() mutable {
                        deliver_[to](from, f);
                      });
}

// ---- Per-node plumbing ----

namespace {

/// Env adapter binding one node to the shared scheduler, network, and log.
class SimEnv : public Env {
 public:
  SimEnv(SimScheduler* sched, SimNet* net, TraceLog* trace, uint64_t node)
      : sched_(sched), net_(net), trace_(trace), node_(node) {}

  uint64_t now_us() override { return sched_->now(); }
  TimerId schedule(uint64_t delay_us, std::function<void()> fn) override {
    return sched_->schedule_in(delay_us, std::move(fn));
  }
  void cancel(TimerId id) override { sched_->cancel(id); }
  void send(uint64_t to_node, const Bytes& frame) override {
    net_->send(node_, to_node, frame);
  }
  void trace(const std::string& line) override {
    trace_->add(sched_->now(), node_, line);
  }

 private:
  SimScheduler* sched_;
  SimNet* net_;
  TraceLog* trace_;
  uint64_t node_;
};

/// Adds a constant to every output lane: the corrupt_result fault.
class OffsetExecutor : public ModelExecutor {
 public:
  OffsetExecutor(std::unique_ptr<ModelExecutor> inner, double offset)
      : inner_(std::move(inner)), offset_(offset) {}

  std::vector<std::vector<double>> run(
      const LinearToyModel& model,
      const std::vector<std::vector<double>>& inputs) override {
    auto out = inner_->run(model, inputs);
    for (auto& row : out) {
      for (double& v : row) v += offset_;
    }
    return out;
  }

 private:
  std::unique_ptr<ModelExecutor> inner_;
  double offset_;
};

std::array<uint8_t, 32> derive_seed(uint64_t master, const char* role,
                                    uint64_t index) {
  Encoder e;
  e.u64(master);
  e.str(role);
  e.u64(index);
  Bytes b = std::move(e).take();
  return hash(ByteView(b.data(), b.size())).data;
}

std::string hex8(const Hash32& h) {
  return to_hex(ByteView(h.data.data(), 4));
}

}  // namespace

// ---- SimCluster ----

struct SimCluster::Node {
  std::unique_ptr<SimEnv> env;
  std::unique_ptr<InferenceEngine> engine;
  std::unique_ptr<Coordinator> coordinator;
  std::unique_ptr<ProxyCore> proxy;
  std::vector<OrderedSlot> ordered;
};

SimCluster::SimCluster(const ScenarioSpec& spec)
    : spec_(spec),
      model_store_(std::make_shared<std::map<std::string, Bytes>>()) {
  net_ = std::make_unique<SimNet>(&sched_, &trace_, spec.net, spec.n_nodes);

  for (uint64_t i = 0; i < spec.n_nodes; i++) {
    keys_.push_back(KeyPair::from_seed(derive_seed(spec.seed, "node-key", i)));
  }
  std::sort(keys_.begin(), keys_.end(),
            [](const KeyPair& a, const KeyPair& b) {
              return a.public_key() < b.public_key();
            });
  for (uint64_t i = 0; i < spec.n_nodes; i++) {
    NodeIdentity id;
    id.public_key = keys_[i].public_key();
    id.endpoint = "sim://" + std::to_string(i);
    id.index = i;
    config_.nodes.push_back(id);
  }
  config_.f = spec.f;
  config_.view_timeout_us = spec.view_timeout_us;
  config_.exec_batch_max = spec.exec_batch_max;
  config_.agree_batch_max = spec.agree_batch_max;
  config_.agree_pipeline = spec.agree_pipeline;
  config_.checkpoint_interval = spec.checkpoint_interval;

  ModelFetcher fetch = [store = model_store_](const std::string& url)
      -> std::optional<Bytes> {
    auto it = store->find(url);
    if (it == store->end()) return std::nullopt;
    return it->second;
  };

  for (uint64_t i = 0; i < spec.n_nodes; i++) {
    auto node = std::make_unique<Node>();
    node->env = std::make_unique<SimEnv>(&sched_, net_.get(), &trace_, i);

    FaultSpec fault;
    if (auto it = spec.faults.find(i); it != spec.faults.end()) {
      fault = it->second;
    }
    std::unique_ptr<ModelExecutor> exec = std::make_unique<ToyExecutor>();
    exec = std::make_unique<PerturbingExecutor>(std::move(exec), i,
                                                spec.perturb_magnitude);
    if (fault.behavior == FaultSpec::Behavior::corrupt_result) {
      exec = std::make_unique<OffsetExecutor>(std::move(exec),
                                              fault.magnitude);
    }
    node->engine = std::make_unique<InferenceEngine>(
        config_.nodes[i], spec.n_nodes, spec.exec_batch_max,
        spec.flush_interval_us, std::move(exec), fetch);
    if (spec.exec_cost) node->engine->set_cost(*spec.exec_cost);

    node->coordinator = std::make_unique<Coordinator>(
        config_, i, keys_[i], *node->engine, *node->env, fault,
        spec.strategy);
    node->proxy = std::make_unique<ProxyCore>(
        config_, &node->coordinator->committed_state(),
        ProxyCore::Hooks{
            [this, i](const InferenceRequest& req) {
              submit_request_via(i, req);
            },
            [this, i](const GroupOp& op) { submit_group_op_via(i, op); }});

    Node* raw = node.get();
    node->coordinator->set_ordered_handler([raw](const OrderedSlot& slot) {
      raw->ordered.push_back(slot);
      raw->proxy->on_ordered(slot);
    });
    nodes_.push_back(std::move(node));
  }

  for (uint64_t i = 0; i < spec.n_nodes; i++) {
    Coordinator* coord = nodes_[i]->coordinator.get();
    net_->connect(i, [coord](uint64_t from, const Bytes& frame) {
      coord->on_frame(from, ByteView(frame.data(), frame.size()));
    });
  }
}

SimCluster::~SimCluster() = default;

Coordinator& SimCluster::coordinator(uint64_t i) {
  return *nodes_[i]->coordinator;
}
InferenceEngine& SimCluster::engine(uint64_t i) { return *nodes_[i]->engine; }
ProxyCore& SimCluster::proxy(uint64_t i) { return *nodes_[i]->proxy; }
const std::vector<OrderedSlot>& SimCluster::ordered(uint64_t i) const {
  return nodes_[i]->ordered;
}

void SimCluster::add_model_file(const std::string& url, Bytes file) {
  (*model_store_)[url] = std::move(file);
}

void SimCluster::submit_request_via(uint64_t proxy_node,
                                    const InferenceRequest& req) {
  if (spec_.proxy_discard.count(proxy_node)) {
    trace_.add(sched_.now(), proxy_node,
               "proxy-discard request=" + hex8(req.request_id));
    return;
  }
  Encoder e;
  req.encode(e);
  Bytes frame = frame_message(MsgType::client_request, std::move(e).take());
  for (uint64_t j = 0; j < config_.n(); j++) {
    if (j == proxy_node) continue;
    net_->send(proxy_node, j, frame);
  }
  Coordinator* coord = nodes_[proxy_node]->coordinator.get();
  sched_.schedule_in(0, [coord, req]() { coord->submit_request(req); });
}

void SimCluster::submit_group_op_via(uint64_t proxy_node, const GroupOp& op) {
  if (spec_.proxy_discard.count(proxy_node)) {
    trace_.add(sched_.now(), proxy_node,
               "proxy-discard op=" + hex8(op.op_id()));
    return;
  }
  Encoder e;
  op.encode(e);
  Bytes frame = frame_message(MsgType::group_op, std::move(e).take());
  for (uint64_t j = 0; j < config_.n(); j++) {
    if (j == proxy_node) continue;
    net_->send(proxy_node, j, frame);
  }
  Coordinator* coord = nodes_[proxy_node]->coordinator.get();
  sched_.schedule_in(0, [coord, op]() { coord->submit_group_op(op); });
}

// ---- Workload generation ----

GeneratedGroup generate_group(const std::string& group_id,
                              const WorkloadSpec& workload, uint64_t salt) {
  GeneratedGroup out;
  out.group_id = group_id;
  std::seed_seq seq{workload.seed, salt, uint64_t{0x6d6f64656c}};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  const uint64_t in = workload.input_dim;
  const uint64_t dim = workload.output_dim;
  std::vector<double> base_w(dim * in);
  std::vector<double> base_b(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : base_w) w = normal(rng) * scale;
  for (double& b : base_b) b = normal(rng) * 0.1;

  // Per-model jitter small enough that outputs of any two models stay well
  // inside epsilon for inputs in [-1, 1]: each lane moves by at most
  // (in + 1) * jitter, so the euclidean gap between two models is bounded
  // by 2 * sqrt(dim) * (in + 1) * jitter.
  const double bound = 2.0 * std::sqrt(static_cast<double>(dim)) *
                       static_cast<double>(in + 1);
  const double jitter = workload.epsilon / (4.0 * bound);
  std::uniform_real_distribution<double> uni(-jitter, jitter);

  for (uint64_t m = 0; m < workload.models_per_group; m++) {
    LinearToyModel model;
    model.input_dim = in;
    model.output_dim = dim;
    model.softmax = false;
    model.weights = base_w;
    model.bias = base_b;
    for (double& w : model.weights) w += uni(rng);
    for (double& b : model.bias) b += uni(rng);

    std::string url = "mem://" + group_id + "/" + std::to_string(salt) + "/" +
                      std::to_string(m);
    Bytes file = model.to_file_bytes();
    ModelDescriptor desc;
    desc.model_url = url;
    desc.input_dim = in;
    desc.output_dim = dim;
    desc.weights_digest = model.digest();
    out.definition.models.push_back(desc);
    out.model_files.emplace_back(url, std::move(file));
  }
  out.definition.distance.metric = workload.metric;
  out.definition.distance.default_epsilon = workload.epsilon;
  return out;
}

// ---- run_scenario ----

namespace {

struct ReqState {
  InferenceRequest request;
  uint64_t proxy = 0;
  uint64_t proxies_tried = 1;
  uint64_t submitted_at = 0;
  uint64_t last_submit = 0;
  bool submitted = false;
  bool verified = false;
  uint64_t certified_at = 0;
  std::optional<InferenceResponse> response;
};

// A chain of group ops executed strictly in order (define, then activate),
// each step acknowledged before the next starts.
struct ChainState {
  std::string group_id;
  std::vector<GroupOp> steps;
  size_t next = 0;
  std::optional<Hash32> awaiting;
  uint64_t proxy = 0;
  uint64_t proxies_tried = 1;
  uint64_t last_submit = 0;
  uint64_t not_before = 0;
  std::vector<GroupOpRecord> records;
  bool finished = false;
};

std::mt19937_64 seeded_rng(uint64_t a, uint64_t b, uint64_t c) {
  std::seed_seq q{a, b, c};
  return std::mt19937_64(q);
}

struct Driver {
  SimCluster& cluster;
  const ScenarioSpec& spec;
  KeyPair client;
  KeyPair owner;
  std::mt19937_64 rng;
  std::vector<ReqState> reqs;
  std::vector<ChainState> setup_chains;
  std::vector<ChainState> update_chains;
  bool requests_scheduled = false;
  bool done = false;
  uint64_t nonce_counter = 0;

  Driver(SimCluster& c, const ScenarioSpec& s)
      : cluster(c),
        spec(s),
        client(KeyPair::from_seed(derive_seed(s.seed, "client-key", 0))),
        owner(KeyPair::from_seed(derive_seed(s.seed, "owner-key", 0))),
        rng(seeded_rng(s.seed, s.workload.seed, 0x647276)) {}

  Bytes fresh_nonce() {
    Encoder e;
    e.u64(nonce_counter++);
    e.u64(rng());
    return std::move(e).take();
  }

  uint64_t first_usable_proxy(uint64_t start) const {
    for (uint64_t k = 0; k < cluster.n(); k++) {
      uint64_t p = (start + k) % cluster.n();
      if (!spec.proxy_discard.count(p)) return p;
    }
    return start % cluster.n();
  }

  std::string group_name(uint64_t g) const {
    return "group-" + std::to_string(g);
  }

  ChainState make_update_chain(uint64_t g, uint64_t version_salt,
                               uint64_t not_before) {
    GeneratedGroup gen =
        generate_group(group_name(g), spec.workload, version_salt);
    for (auto& [url, file] : gen.model_files) {
      cluster.add_model_file(url, std::move(file));
    }
    ChainState chain;
    chain.group_id = group_name(g);
    chain.not_before = not_before;
    chain.proxy = first_usable_proxy(g + version_salt);
    chain.steps.push_back(make_signed_group_op(owner, fresh_nonce(),
                                               OpKind::define_group,
                                               chain.group_id,
                                               gen.definition));
    chain.steps.push_back(make_signed_group_op(owner, fresh_nonce(),
                                               OpKind::activate_group,
                                               chain.group_id, std::nullopt));
    return chain;
  }

  void start() {
    for (uint64_t g = 0; g < spec.workload.n_groups; g++) {
      setup_chains.push_back(make_update_chain(g, g, 0));
    }
    tick();
  }

  void submit_chain_step(ChainState& chain) {
    const GroupOp& op = chain.steps[chain.next];
    chain.awaiting = op.op_id();
    chain.last_submit = cluster.scheduler().now();
    cluster.trace_log().add(cluster.scheduler().now(), cluster.n(),
                            "driver submit-op op=" + hex8(op.op_id()) +
                                " group=" + chain.group_id +
                                " proxy=" + std::to_string(chain.proxy));
    cluster.submit_group_op_via(chain.proxy, op);
  }

  // True when another chain for the same group is mid-flight (the proxy
  // admits one update per group at a time, so the driver serializes too).
  bool group_busy(const std::string& gid, const ChainState* self) const {
    for (const auto* list : {&setup_chains, &update_chains}) {
      for (const ChainState& c : *list) {
        if (&c == self || c.finished) continue;
        if (c.group_id == gid && c.next > 0) return true;
        if (c.group_id == gid && c.awaiting) return true;
      }
    }
    return false;
  }

  void advance_chain(ChainState& chain, uint64_t now) {
    if (chain.finished) return;
    if (chain.awaiting) {
      auto ack = cluster.proxy(chain.proxy).ack_for(*chain.awaiting);
      if (ack) {
        GroupOpRecord rec;
        rec.op = chain.steps[chain.next];
        rec.ack = *ack;
        chain.records.push_back(rec);
        cluster.trace_log().add(
            now, cluster.n(),
            "driver op-acked op=" + hex8(*chain.awaiting) + " status=" +
                (ack->status == OpStatus::ok ? "ok" : "rejected"));
        chain.awaiting.reset();
        chain.next++;
        if (chain.next >= chain.steps.size()) {
          chain.finished = true;
          return;
        }
        submit_chain_step(chain);
        return;
      }
      if (now - chain.last_submit >= spec.client_retry_us &&
          chain.proxies_tried < spec.f + 1) {
        chain.proxy = first_usable_proxy(chain.proxy + 1);
        chain.proxies_tried++;
        submit_chain_step(chain);
      }
      return;
    }
    if (now < chain.not_before) return;
    if (group_busy(chain.group_id, &chain)) return;
    submit_chain_step(chain);
  }

  bool chains_finished(const std::vector<ChainState>& chains) const {
    return std::all_of(chains.begin(), chains.end(),
                       [](const ChainState& c) { return c.finished; });
  }

  void schedule_requests() {
    requests_scheduled = true;
    uint64_t start = std::max(cluster.scheduler().now(), spec.warmup_us);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (uint64_t i = 0; i < spec.workload.n_requests; i++) {
      std::vector<double> input(spec.workload.input_dim);
      for (double& v : input) v = uni(rng);
      ReqState rs;
      rs.request = make_signed_request(
          client, fresh_nonce(), group_name(i % spec.workload.n_groups),
          input, std::nullopt);
      rs.proxy = i % cluster.n();
      reqs.push_back(std::move(rs));
    }
    for (uint64_t i = 0; i < reqs.size(); i++) {
      uint64_t at = start + i * spec.workload.arrival_gap_us;
      cluster.scheduler().schedule_at(at, [this, i]() {
        ReqState& rs = reqs[i];
        rs.submitted = true;
        rs.submitted_at = cluster.scheduler().now();
        rs.last_submit = rs.submitted_at;
        cluster.trace_log().add(cluster.scheduler().now(), cluster.n(),
                                "driver submit request=" +
                                    hex8(rs.request.request_id) +
                                    " proxy=" + std::to_string(rs.proxy));
        cluster.submit_request_via(rs.proxy, rs.request);
      });
    }
    // Updates spread evenly across the request window, round-robin over
    // groups. Chains for one group run back to back, never concurrently.
    uint64_t n_updates = static_cast<uint64_t>(
        spec.workload.update_fraction *
        static_cast<double>(spec.workload.n_requests));
    uint64_t window = spec.workload.n_requests * spec.workload.arrival_gap_us;
    for (uint64_t u = 0; u < n_updates; u++) {
      uint64_t g = u % spec.workload.n_groups;
      uint64_t at = start + window * (u + 1) / (n_updates + 1);
      update_chains.push_back(
          make_update_chain(g, 1000 + u, at));
    }
  }

  void advance_request(ReqState& rs, uint64_t now) {
    if (!rs.submitted || rs.verified) return;
    auto resp = cluster.proxy(rs.proxy).response_for(rs.request.request_id);
    if (resp) {
      if (verify_response(rs.request, *resp, cluster.config())) {
        rs.verified = true;
        rs.certified_at = now;
        rs.response = std::move(resp);
        cluster.trace_log().add(
            now, cluster.n(),
            "driver certified request=" + hex8(rs.request.request_id) +
                " kind=" +
                (rs.response->kind == InferenceResponse::Kind::success
                     ? "success"
                     : "failure"));
        return;
      }
      cluster.trace_log().add(now, cluster.n(),
                              "driver bad-response request=" +
                                  hex8(rs.request.request_id) + " proxy=" +
                                  std::to_string(rs.proxy));
      // Treat like a dead proxy: move on immediately.
      if (rs.proxies_tried < spec.f + 1) {
        rs.proxy = (rs.proxy + 1) % cluster.n();
        rs.proxies_tried++;
        rs.last_submit = now;
        cluster.submit_request_via(rs.proxy, rs.request);
      }
      return;
    }
    if (now - rs.last_submit >= spec.client_retry_us &&
        rs.proxies_tried < spec.f + 1) {
      rs.proxy = (rs.proxy + 1) % cluster.n();
      rs.proxies_tried++;
      rs.last_submit = now;
      cluster.trace_log().add(now, cluster.n(),
                              "driver retry request=" +
                                  hex8(rs.request.request_id) + " proxy=" +
                                  std::to_string(rs.proxy));
      cluster.submit_request_via(rs.proxy, rs.request);
    }
  }

  void tick() {
    uint64_t now = cluster.scheduler().now();
    for (ChainState& c : setup_chains) advance_chain(c, now);
    if (!requests_scheduled && chains_finished(setup_chains)) {
      schedule_requests();
    }
    for (ChainState& c : update_chains) advance_chain(c, now);
    for (ReqState& r : reqs) advance_request(r, now);

    bool all_requests = requests_scheduled &&
                        std::all_of(reqs.begin(), reqs.end(),
                                    [](const ReqState& r) {
                                      return r.verified;
                                    });
    if (all_requests && chains_finished(setup_chains) &&
        chains_finished(update_chains)) {
      done = true;
      return;
    }
    cluster.scheduler().schedule_in(spec.client_poll_us, [this]() { tick(); });
  }
};

}  // namespace

ScenarioResult run_scenario(const ScenarioSpec& spec) {
  SimCluster cluster(spec);
  Driver driver(cluster, spec);
  driver.start();

  SimScheduler& sched = cluster.scheduler();
  while (!driver.done && !sched.idle() && sched.now() <= spec.duration_us) {
    sched.run_one();
  }

  ScenarioResult result;
  result.config = cluster.config();
  result.deadlocked = !driver.done;
  result.finished_at_us = sched.now();
  result.net_sent = cluster.net().sent();
  result.net_dropped = cluster.net().dropped();

  for (const ReqState& rs : driver.reqs) {
    RequestRecord rec;
    rec.request = rs.request;
    rec.submitted_at_us = rs.submitted_at;
    rec.certified_at_us = rs.certified_at;
    rec.proxies_tried = rs.proxies_tried;
    rec.verified = rs.verified;
    rec.response = rs.response;
    result.requests.push_back(std::move(rec));
  }
  for (const auto* chains : {&driver.setup_chains, &driver.update_chains}) {
    for (const ChainState& c : *chains) {
      for (const GroupOpRecord& r : c.records) result.group_ops.push_back(r);
      // Steps never acknowledged still surface, with an empty ack.
      for (size_t s = c.records.size(); s < c.steps.size(); s++) {
        GroupOpRecord rec;
        rec.op = c.steps[s];
        result.group_ops.push_back(std::move(rec));
      }
    }
  }
  for (uint64_t i = 0; i < cluster.n(); i++) {
    result.ordered.push_back(cluster.ordered(i));
    result.ordered_log.push_back(cluster.coordinator(i).ordered_log());
    result.view_changes.push_back(
        cluster.coordinator(i).view_changes_started());
    result.views.push_back(cluster.coordinator(i).view());
    result.last_stable.push_back(cluster.coordinator(i).last_stable());
    result.honest.push_back(cluster.honest(i));
  }
  result.trace = cluster.trace_log().render();
  return result;
}

// ---- Oracle ----

namespace {

std::string describe(const Hash32& h) { return hex8(h); }

// The ordered slot holding `seq` on node `i`, if any.
const OrderedSlot* slot_at(const ScenarioResult& r, uint64_t node,
                           uint64_t seq) {
  for (const OrderedSlot& s : r.ordered[node]) {
    if (s.seq == seq) return &s;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> check_invariants(const ScenarioResult& r) {
  std::vector<std::string> violations;
  const uint64_t n = r.config.n();
  const uint64_t f = r.config.f;

  // Honest ordered logs are prefixes of one another.
  for (uint64_t i = 0; i < n; i++) {
    if (!r.honest[i]) continue;
    for (uint64_t j = i + 1; j < n; j++) {
      if (!r.honest[j]) continue;
      const auto& a = r.ordered_log[i];
      const auto& b = r.ordered_log[j];
      size_t common = std::min(a.size(), b.size());
      for (size_t k = 0; k < common; k++) {
        if (a[k] != b[k]) {
          violations.push_back(
              "ordered logs diverge: nodes " + std::to_string(i) + "," +
              std::to_string(j) + " at position " + std::to_string(k) +
              " seq " + std::to_string(a[k].first) + "/" +
              std::to_string(b[k].first));
          break;
        }
      }
    }
  }

  for (const RequestRecord& rec : r.requests) {
    if (!rec.verified || !rec.response) continue;
    const InferenceResponse& resp = *rec.response;

    // Every response the driver accepted re-verifies from scratch.
    if (!verify_response(rec.request, resp, r.config)) {
      violations.push_back("response fails re-verification: request " +
                           describe(rec.request.request_id));
      continue;
    }
    if (resp.kind != InferenceResponse::Kind::success) continue;
    const InferenceCertificate& cert = *resp.certificate;

    // Find the ordering slot and op index on any honest node.
    const OrderedSlot* slot = nullptr;
    for (uint64_t i = 0; i < n && !slot; i++) {
      if (r.honest[i]) slot = slot_at(r, i, cert.seq);
    }
    size_t op_index = SIZE_MAX;
    if (slot) {
      for (size_t k = 0; k < slot->ops.size(); k++) {
        if (slot->ops[k].kind == OpKind::request_inf && slot->ops[k].request &&
            slot->ops[k].request->request_id == rec.request.request_id) {
          op_index = k;
          break;
        }
      }
    }
    if (!slot || op_index == SIZE_MAX) {
      violations.push_back("certified request not in any honest ordered log: " +
                           describe(rec.request.request_id));
      continue;
    }

    for (const InferenceResult& res : resp.results) {
      auto att_it = cert.attestations.find(res.node_index);
      if (att_it == cert.attestations.end()) {
        violations.push_back("covered result lacks attestation entry: node " +
                             std::to_string(res.node_index));
        continue;
      }
      // More than f distinct attestors per covered result.
      std::set<uint64_t> distinct;
      for (const CertAttestation& a : att_it->second) distinct.insert(a.attestor);
      if (distinct.size() <= f) {
        violations.push_back("covered result has too few attestors: request " +
                             describe(rec.request.request_id) + " node " +
                             std::to_string(res.node_index));
      }
      // Some honest attestor judged this result inside a satisfied quorum.
      bool honest_backing = false;
      for (uint64_t a : distinct) {
        if (a >= n || !r.honest[a]) continue;
        const OrderedSlot* own = slot_at(r, a, cert.seq);
        if (!own) continue;
        auto oc = own->outcomes.find(op_index);
        if (oc == own->outcomes.end()) continue;
        if (oc->second.satisfied && oc->second.quorum.count(res.node_index)) {
          honest_backing = true;
          break;
        }
      }
      if (!honest_backing) {
        violations.push_back(
            "covered result outside every honest attestor quorum: request " +
            describe(rec.request.request_id) + " node " +
            std::to_string(res.node_index));
      }
    }
  }

  // Version serializability: replay each honest log; every ok request op
  // must carry the version active at its slot, and certified results must
  // carry exactly that version.
  std::map<Hash32, const RequestRecord*> by_request;
  for (const RequestRecord& rec : r.requests) {
    by_request[rec.request.request_id] = &rec;
  }
  for (uint64_t i = 0; i < n; i++) {
    if (!r.honest[i]) continue;
    StateMachine replay;
    for (const OrderedSlot& slot : r.ordered[i]) {
      for (const OpEntry& op : slot.ops) {
        if (op.kind == OpKind::request_inf && op.request &&
            op.status == OpStatus::ok) {
          const GroupVersions* gv = replay.group(op.request->group_id);
          std::optional<uint64_t> active =
              gv ? gv->active : std::optional<uint64_t>{};
          if (!active || *active != op.version) {
            violations.push_back(
                "ordered request version is not the active version: node " +
                std::to_string(i) + " seq " + std::to_string(slot.seq) +
                " request " + describe(op.request->request_id));
          }
          auto it = by_request.find(op.request->request_id);
          if (it != by_request.end() && it->second->verified &&
              it->second->response &&
              it->second->response->kind == InferenceResponse::Kind::success) {
            for (const InferenceResult& res : it->second->response->results) {
              if (res.group_version != op.version) {
                violations.push_back(
                    "certified result version differs from ordered version: "
                    "request " +
                    describe(op.request->request_id) + " result v" +
                    std::to_string(res.group_version) + " ordered v" +
                    std::to_string(op.version));
              }
            }
          }
        }
        replay.apply_ordered_op(op);
      }
    }
  }

  return violations;
}

}  // namespace credo::harness
