// Copyright (c) the credo authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "credo/distance.hpp"
#include "credo/harness.hpp"

namespace credo::harness {

// ---- Strategy benchmark ----

namespace {

ScenarioSpec bench_scenario(const BenchSpec& spec,
                            Coordinator::Strategy strategy) {
  ScenarioSpec s;
  s.n_nodes = spec.n_nodes;
  s.f = spec.f;
  s.strategy = strategy;
  s.workload.n_requests = spec.n_requests;
  s.workload.arrival_gap_us = spec.arrival_gap_us;
  s.workload.n_groups = 1;
  s.workload.models_per_group = spec.n_nodes;
  s.exec_batch_max = spec.exec_batch_max;
  s.agree_batch_max = spec.agree_batch_max;
  s.agree_pipeline = spec.agree_pipeline;
  s.exec_cost = spec.exec_cost;
  s.seed = spec.seed;
  s.net.seed = spec.seed;
  s.duration_us = 600'000'000;
  return s;
}

// Certified-success throughput over the span from first submission to last
// certification, in requests per simulated second.
std::pair<double, uint64_t> throughput_of(const ScenarioResult& r) {
  uint64_t first_submit = UINT64_MAX;
  uint64_t last_done = 0;
  uint64_t ok = 0;
  for (const RequestRecord& rec : r.requests) {
    if (rec.submitted_at_us > 0) {
      first_submit = std::min(first_submit, rec.submitted_at_us);
    }
    if (rec.verified && rec.response &&
        rec.response->kind == InferenceResponse::Kind::success) {
      ok++;
      last_done = std::max(last_done, rec.certified_at_us);
    }
  }
  if (ok == 0 || last_done <= first_submit) return {0.0, 0};
  uint64_t span = last_done - first_submit;
  return {static_cast<double>(ok) * 1e6 / static_cast<double>(span), span};
}

}  // namespace

BenchReport bench_strategies(const BenchSpec& spec) {
  BenchReport report;
  report.n_requests = spec.n_requests;

  ScenarioResult a = run_scenario(
      bench_scenario(spec, Coordinator::Strategy::execute_then_agree));
  ScenarioResult b = run_scenario(
      bench_scenario(spec, Coordinator::Strategy::agree_then_execute));

  auto [tps_a, span_a] = throughput_of(a);
  auto [tps_b, span_b] = throughput_of(b);
  report.execute_agree_attest_tps = tps_a;
  report.agree_execute_tps = tps_b;
  report.execute_agree_attest_span_us = span_a;
  report.agree_execute_span_us = span_b;
  report.all_certified =
      !a.deadlocked && !b.deadlocked &&
      a.certified() == a.requests.size() &&
      b.certified() == b.requests.size();
  return report;
}

// ---- Accuracy experiment ----

namespace {

constexpr uint64_t kClasses = 10;

// One model's confidence vector: shared per-trial posterior plus per-model
// noise. Noisier models flip the argmax more often, which is what grades
// their single-model accuracy.
std::vector<double> model_output(const std::vector<double>& posterior,
                                 double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, noise);
  std::vector<double> v = posterior;
  for (double& x : v) x = std::max(0.0, x + n(rng));
  return v;
}

size_t argmax(const std::vector<double>& v) {
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// The ensemble rule: among members of the selected quorum, a label needs
// strictly more than f votes; of the qualified labels the one with the
// highest supporter confidence wins. No qualified label means no answer.
std::optional<size_t> ensemble_label(
    const std::map<uint64_t, std::vector<double>>& quorum_outputs, uint64_t f) {
  std::map<size_t, std::pair<uint64_t, double>> votes;  // label -> (count, conf)
  for (const auto& [node, v] : quorum_outputs) {
    size_t label = argmax(v);
    auto& entry = votes[label];
    entry.first++;
    entry.second = std::max(entry.second, v[label]);
  }
  std::optional<size_t> best;
  double best_conf = -1.0;
  for (const auto& [label, entry] : votes) {
    if (entry.first <= f) continue;
    if (entry.second > best_conf) {
      best = label;
      best_conf = entry.second;
    }
  }
  return best;
}

}  // namespace

AccuracyReport accuracy_experiment(uint64_t group_size, uint64_t f_dishonest,
                                   double epsilon, uint64_t trials,
                                   uint64_t seed) {
  AccuracyReport report;
  report.trials = trials;
  const uint64_t k = group_size;
  const uint64_t f = std::max<uint64_t>((k - 1) / 3, f_dishonest);

  // Noise ladder: model m repeats the ladder every 4 models, mirroring a
  // group of independently trained peers of staggered quality.
  std::vector<double> noise(k);
  for (uint64_t m = 0; m < k; m++) {
    noise[m] = 0.035 + 0.03 * static_cast<double>(m % 4);
  }

  std::seed_seq seq{seed, trials, uint64_t{0x616363}};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<uint64_t> label_dist(0, kClasses - 1);
  std::uniform_real_distribution<double> margin_dist(0.0, 0.22);
  std::uniform_real_distribution<double> floor_dist(0.01, 0.05);

  std::vector<uint64_t> single_correct(k, 0);
  uint64_t honest_correct = 0;
  uint64_t beyond_excluded = 0;
  uint64_t beyond_correct = 0;
  uint64_t within_correct = 0;

  for (uint64_t t = 0; t < trials; t++) {
    // Shared posterior: the true label leads the runner-up by a random
    // margin; hard trials have tiny margins that per-model noise flips.
    uint64_t y = label_dist(rng);
    uint64_t w = (y + 1 + label_dist(rng) % (kClasses - 1)) % kClasses;
    std::vector<double> posterior(kClasses);
    for (double& p : posterior) p = floor_dist(rng);
    posterior[w] = 0.45;
    posterior[y] = 0.45 + margin_dist(rng);

    std::map<uint64_t, std::vector<double>> honest;
    for (uint64_t m = 0; m < k; m++) {
      honest[m] = model_output(posterior, noise[m], rng);
      if (argmax(honest[m]) == y) single_correct[m]++;
    }

    // Honest run.
    {
      auto outcome = distance::select_quorum(honest, k, f,
                                             distance::Metric::euclidean,
                                             epsilon);
      std::map<uint64_t, std::vector<double>> q;
      if (outcome.satisfied) {
        for (uint64_t m : outcome.selected) q[m] = honest[m];
      }
      auto label = ensemble_label(q, f);
      if (label && *label == y) honest_correct++;
    }

    // One model (the most accurate one) pushed beyond epsilon.
    {
      auto results = honest;
      double shift = 3.0 * epsilon / std::sqrt(static_cast<double>(kClasses));
      for (double& x : results[0]) x += shift;
      auto outcome = distance::select_quorum(results, k, f,
                                             distance::Metric::euclidean,
                                             epsilon);
      bool excluded = outcome.satisfied && !outcome.selected.count(0);
      if (excluded) beyond_excluded++;
      std::map<uint64_t, std::vector<double>> q;
      if (outcome.satisfied) {
        for (uint64_t m : outcome.selected) q[m] = results[m];
      }
      auto label = ensemble_label(q, f);
      if (label && *label == y) beyond_correct++;
    }

    // f_dishonest models steering within epsilon: they sit a hair inside
    // the bound and put their full confidence mass on the wrong label.
    {
      auto results = honest;
      double shift = 0.45 * epsilon / std::sqrt(2.0);
      for (uint64_t m = 0; m < f_dishonest && m < k; m++) {
        std::vector<double> v = honest[m];
        v[w] += shift;
        v[y] = std::max(0.0, v[y] - shift);
        results[m] = v;
      }
      auto outcome = distance::select_quorum(results, k, f,
                                             distance::Metric::euclidean,
                                             epsilon);
      std::map<uint64_t, std::vector<double>> q;
      if (outcome.satisfied) {
        for (uint64_t m : outcome.selected) q[m] = results[m];
      }
      auto label = ensemble_label(q, f);
      if (label && *label == y) within_correct++;
    }
  }

  const double denom = static_cast<double>(trials);
  for (uint64_t m = 0; m < k; m++) {
    report.per_model_accuracy.push_back(
        static_cast<double>(single_correct[m]) / denom);
  }
  report.best_single = *std::max_element(report.per_model_accuracy.begin(),
                                         report.per_model_accuracy.end());
  report.worst_single = *std::min_element(report.per_model_accuracy.begin(),
                                          report.per_model_accuracy.end());
  report.honest_ensemble = static_cast<double>(honest_correct) / denom;
  report.beyond_excluded_fraction =
      static_cast<double>(beyond_excluded) / denom;
  report.beyond_ensemble = static_cast<double>(beyond_correct) / denom;
  report.within_ensemble = static_cast<double>(within_correct) / denom;
  return report;
}

}  // namespace credo::harness
