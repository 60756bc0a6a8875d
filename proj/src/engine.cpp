// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include "credo/engine.hpp"

#include <fstream>
#include <stdexcept>

namespace credo {

void PendingResultStore::put(const InferenceResult& r) {
  std::lock_guard<std::mutex> lock(mu_);
  by_request_[r.request_id][r.group_version] = r;
}

std::optional<InferenceResult> PendingResultStore::get(
    const Hash32& request_id, uint64_t version) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = by_request_.find(request_id);
  if (it == by_request_.end()) return std::nullopt;
  auto vit = it->second.find(version);
  if (vit == it->second.end()) return std::nullopt;
  return vit->second;
}

void PendingResultStore::prune(const Hash32& request_id) {
  std::lock_guard<std::mutex> lock(mu_);
  by_request_.erase(request_id);
}

size_t PendingResultStore::request_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return by_request_.size();
}

ModelFetcher filesystem_fetcher() {
  return [](const std::string& url) -> std::optional<Bytes> {
    std::string path = url;
    if (path.rfind("file://", 0) == 0) path = path.substr(7);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    Bytes data((std::istreambuf_iterator<char>(in)),
               std::istreambuf_iterator<char>());
    return data;
  };
}

InferenceEngine::InferenceEngine(NodeIdentity self, uint64_t owner_node_count,
                                 uint64_t exec_batch_max,
                                 uint64_t flush_interval_us,
                                 std::unique_ptr<ModelExecutor> executor,
                                 ModelFetcher fetch)
    : self_(std::move(self)),
      owner_node_count_(owner_node_count),
      exec_batch_max_(exec_batch_max),
      flush_interval_us_(flush_interval_us),
      executor_(std::move(executor)),
      fetch_(std::move(fetch)) {
  if (owner_node_count_ < 1) {
    throw std::invalid_argument("engine: no owner nodes");
  }
  if (exec_batch_max_ < 1) throw std::invalid_argument("engine: batch max < 1");
  if (!executor_) throw std::invalid_argument("engine: null executor");
  if (!fetch_) throw std::invalid_argument("engine: null fetcher");
}

std::optional<std::string> InferenceEngine::load_group(const ModelGroup& group) {
  if (auto err = group.validate()) return err;
  std::lock_guard<std::mutex> lock(mu_);
  auto& versions = groups_[group.group_id];
  if (versions.count(group.version)) return "version already loaded";

  VersionState vs;
  vs.meta = group;
  vs.status = group.status;
  for (const auto& desc : assigned_models(owner_node_count_, group, self_)) {
    auto file = fetch_(desc.model_url);
    if (!file) return "model file unavailable: " + desc.model_url;
    if (hash(*file) != desc.weights_digest) {
      return "weights digest mismatch: " + desc.model_url;
    }
    LinearToyModel model;
    try {
      model = LinearToyModel::from_file_bytes(
          ByteView(file->data(), file->size()));
    } catch (const CodecError& e) {
      return std::string("bad model file: ") + e.what();
    }
    if (model.input_dim != desc.input_dim ||
        model.output_dim != desc.output_dim) {
      return "model file dimensions disagree with descriptor";
    }
    vs.resident.emplace_back(desc, std::move(model));
  }
  versions.emplace(group.version, std::move(vs));
  return std::nullopt;
}

void InferenceEngine::set_status(const std::string& group_id, uint64_t version,
                                 GroupStatus status) {
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(group_id);
  if (git == groups_.end()) return;
  auto vit = git->second.find(version);
  if (vit == git->second.end()) return;
  vit->second.status = status;
  vit->second.meta.status = status;
  if (status == GroupStatus::retired) {
    vit->second.resident.clear();
    vit->second.queue.clear();
  }
}

void InferenceEngine::retire_group(const std::string& group_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(group_id);
  if (git == groups_.end()) return;
  for (auto& [version, vs] : git->second) {
    vs.status = GroupStatus::retired;
    vs.meta.status = GroupStatus::retired;
    vs.resident.clear();
    vs.queue.clear();
  }
}

bool InferenceEngine::has_version(const std::string& group_id,
                                  uint64_t version) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(group_id);
  return git != groups_.end() && git->second.count(version) > 0;
}

bool InferenceEngine::is_resident(const std::string& group_id,
                                  uint64_t version) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(group_id);
  if (git == groups_.end()) return false;
  auto vit = git->second.find(version);
  if (vit == git->second.end()) return false;
  return !vit->second.resident.empty() &&
         vit->second.status != GroupStatus::retired;
}

GroupStatus InferenceEngine::status_of(const std::string& group_id,
                                       uint64_t version) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(group_id);
  if (git == groups_.end()) throw std::out_of_range("unknown group");
  auto vit = git->second.find(version);
  if (vit == git->second.end()) throw std::out_of_range("unknown version");
  return vit->second.status;
}

std::vector<uint64_t> InferenceEngine::live_versions(
    const std::string& group_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<uint64_t> out;
  auto git = groups_.find(group_id);
  if (git == groups_.end()) return out;
  for (const auto& [version, vs] : git->second) {
    if (vs.status != GroupStatus::retired) out.push_back(version);
  }
  return out;
}

ExecutionBatch InferenceEngine::make_batch(const std::string& group_id,
                                           uint64_t version, VersionState& vs,
                                           size_t take) const {
  ExecutionBatch batch;
  batch.group_id = group_id;
  batch.group_version = version;
  if (!vs.resident.empty()) {
    batch.model_digest = vs.resident.front().first.weights_digest;
  }
  for (size_t i = 0; i < take; i++) {
    batch.requests.push_back(std::move(vs.queue[i].request));
  }
  vs.queue.erase(vs.queue.begin(), vs.queue.begin() + take);
  return batch;
}

InferenceEngine::SubmitOutcome InferenceEngine::submit(
    const InferenceRequest& req, uint64_t now_us) {
  SubmitOutcome out;
  if (!verify_request(req)) {
    out.error = "invalid request signature";
    return out;
  }
  std::lock_guard<std::mutex> lock(mu_);
  auto git = groups_.find(req.group_id);
  if (git == groups_.end()) {
    out.error = "unknown group";
    return out;
  }
  bool any_live = false;
  for (auto& [version, vs] : git->second) {
    if (vs.status == GroupStatus::retired) continue;
    any_live = true;
    if (vs.seen.count(req.request_id)) continue;  // duplicate, absorbed
    vs.seen[req.request_id] = true;
    vs.queue.push_back({req, now_us});
    if (vs.queue.size() >= exec_batch_max_) {
      out.ready.push_back(
          make_batch(req.group_id, version, vs, exec_batch_max_));
    }
  }
  if (!any_live) out.error = "group retired";
  return out;
}

std::vector<ExecutionBatch> InferenceEngine::flush_due(uint64_t now_us) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<ExecutionBatch> out;
  for (auto& [group_id, versions] : groups_) {
    for (auto& [version, vs] : versions) {
      while (!vs.queue.empty() &&
             vs.queue.front().enqueued_us + flush_interval_us_ <= now_us) {
        size_t take = std::min<size_t>(vs.queue.size(), exec_batch_max_);
        out.push_back(make_batch(group_id, version, vs, take));
      }
    }
  }
  return out;
}

std::vector<ExecutionBatch> InferenceEngine::flush_version(
    const std::string& group_id, uint64_t version) {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<ExecutionBatch> out;
  auto git = groups_.find(group_id);
  if (git == groups_.end()) return out;
  auto vit = git->second.find(version);
  if (vit == git->second.end()) return out;
  VersionState& vs = vit->second;
  while (!vs.queue.empty()) {
    size_t take = std::min<size_t>(vs.queue.size(), exec_batch_max_);
    out.push_back(make_batch(group_id, version, vs, take));
  }
  return out;
}

std::vector<ExecutionBatch> InferenceEngine::flush_all() {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<ExecutionBatch> out;
  for (auto& [group_id, versions] : groups_) {
    for (auto& [version, vs] : versions) {
      while (!vs.queue.empty()) {
        size_t take = std::min<size_t>(vs.queue.size(), exec_batch_max_);
        out.push_back(make_batch(group_id, version, vs, take));
      }
    }
  }
  return out;
}

std::optional<uint64_t> InferenceEngine::next_flush_deadline() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::optional<uint64_t> deadline;
  for (const auto& [group_id, versions] : groups_) {
    for (const auto& [version, vs] : versions) {
      if (vs.queue.empty()) continue;
      uint64_t due = vs.queue.front().enqueued_us + flush_interval_us_;
      if (!deadline || due < *deadline) deadline = due;
    }
  }
  return deadline;
}

std::vector<InferenceResult> InferenceEngine::execute_batch(
    const ExecutionBatch& batch) {
  const LinearToyModel* model = nullptr;
  Hash32 digest{};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto git = groups_.find(batch.group_id);
    if (git == groups_.end()) return {};
    auto vit = git->second.find(batch.group_version);
    if (vit == git->second.end() || vit->second.resident.empty()) return {};
    model = &vit->second.resident.front().second;
    digest = vit->second.resident.front().first.weights_digest;
  }

  std::vector<InferenceResult> produced;
  std::vector<std::vector<double>> inputs;
  std::vector<size_t> fits;  // indices into batch.requests
  for (size_t i = 0; i < batch.requests.size(); i++) {
    if (batch.requests[i].input.size() == model->input_dim) {
      inputs.push_back(batch.requests[i].input);
      fits.push_back(i);
    }
  }
  if (inputs.empty()) return produced;
  auto outputs = executor_->run(*model, inputs);
  for (size_t k = 0; k < fits.size(); k++) {
    InferenceResult r;
    r.request_id = batch.requests[fits[k]].request_id;
    r.node_index = self_.index;
    r.group_id = batch.group_id;
    r.group_version = batch.group_version;
    r.output = std::move(outputs[k]);
    r.model_digest = digest;
    store_.put(r);
    produced.push_back(std::move(r));
  }
  return produced;
}

std::optional<InferenceResult> InferenceEngine::ensure_result(
    const InferenceRequest& req, uint64_t version) {
  if (auto existing = store_.get(req.request_id, version)) return existing;
  ExecutionBatch single;
  single.group_id = req.group_id;
  single.group_version = version;
  single.requests.push_back(req);
  auto produced = execute_batch(single);
  if (produced.empty()) return std::nullopt;
  return produced.front();
}

}  // namespace credo
