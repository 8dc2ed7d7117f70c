#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "itrolab/config.hpp"
#include "itrolab/policy.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab {

struct MetricsRecord {
  int step = 0;
  std::string method;
  double objective_value = 0.0;
  double mean_reward = 0.0;
  double valid_fraction = 0.0;
  double mean_rationale_len = 0.0;
  std::optional<double> accuracy;
  std::optional<double> mean_correct_len;
  std::optional<double> mean_w;
  std::optional<double> clip_fraction;
  std::optional<double> kl_penalty;
  std::optional<double> candidate_entropy_bits;
  int contributing_queries = 0;
  bool skipped = false;
  double wall_ms = 0.0;
};

struct TrainingReport {
  std::vector<MetricsRecord> records;
  Policy final_policy;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  double initial_correct_len = 0.0;
  double final_correct_len = 0.0;
  int skipped_steps = 0;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  // Called at every eval_every boundary and once after the last step.
  std::function<void(int step, const Policy&, bool final)> on_checkpoint;
};

Policy initial_policy(const RunConfig& config);

// Fixed evaluation set derived from the run seed.
std::vector<TaskInstance> eval_instances(const RunConfig& config);

// Mean over the instances of E[|z| | z in Z_y]; unreachable answers are skipped.
double mean_correct_length(const Policy& policy, std::span<const TaskInstance> instances);

double greedy_or_sampled_accuracy(const Policy& policy, const RunConfig& config,
                                  std::span<const TaskInstance> instances, std::uint64_t salt);

// Group rollout with θ_old, per-method update direction, ascent step with
// rate learning_rate, θ_old <- θ. Per-query work is spread over
// config.workers threads; each query draws from its own generator
// (seed, step, query) and contributions are reduced in query order, so the
// result does not depend on the worker count.
TrainingReport train(const RunConfig& config, const TrainHooks& hooks = {},
                     const Policy* reference_policy = nullptr);

}  // namespace itrolab
