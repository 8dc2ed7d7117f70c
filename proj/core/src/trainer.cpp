#include "itrolab/trainer.hpp"

#include <chrono>
#include <stdexcept>
#include <thread>

#include "itrolab/baselines.hpp"
#include "itrolab/itro.hpp"
#include "itrolab/metrics.hpp"
#include "itrolab/oracle.hpp"

namespace itrolab {
namespace {

// Stream labels for Rng::derive.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kInstanceStream = 2;
constexpr std::uint64_t kRolloutStream = 3;
constexpr std::uint64_t kCandidateStream = 4;
constexpr std::uint64_t kEvalSetStream = 5;
constexpr std::uint64_t kEvalDrawStream = 6;

struct QueryOutcome {
  bool contributes = false;
  double objective = 0.0;
  GradientVector grad;
  double reward_sum = 0.0;
  int rollouts = 0;
  int valid = 0;
  double length_sum = 0.0;
  double w_sum = 0.0;
  std::size_t candidates = 0;
  std::size_t clipped = 0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double kl_penalty = 0.0;
};

QueryOutcome run_query(const RunConfig& cfg, const Policy& snapshot, const Policy& reference,
                       int step, int query) {
  const std::uint64_t s = static_cast<std::uint64_t>(step);
  const std::uint64_t q = static_cast<std::uint64_t>(query);
  Rng instance_rng = Rng::derive(cfg.seed, {kInstanceStream, s, q});
  const TaskInstance inst = sample_instance(cfg.task, instance_rng);
  Rng rollout_rng = Rng::derive(cfg.seed, {kRolloutStream, s, q});
  const itro::RolloutGroup group =
      itro::rollout_group(snapshot, inst, cfg.itro.G, cfg.itro.temperature, cfg.task.max_rationale_len,
                          rollout_rng, q);

  QueryOutcome out;
  out.rollouts = static_cast<int>(group.rationales.size());
  for (const itro::Rationale& r : group.rationales) {
    out.reward_sum += r.reward;
    out.valid += r.valid ? 1 : 0;
    out.length_sum += static_cast<double>(r.z.size());
  }

  switch (cfg.method) {
    case Method::itro: {
      const std::vector<Sequence> kept = itro::filter_valid(group, inst.answer);
      if (kept.empty()) return out;
      Rng cand_rng = Rng::derive(cfg.seed, {kCandidateStream, s, q});
      itro::StepResult r = itro::itro_step_grad(snapshot, inst, kept, cfg.itro, cand_rng);
      if (cfg.itro.teacher_update == itro::TeacherUpdate::filtered_sft) {
        r.grad += itro::filtered_sft_grad(snapshot, conditioned_context(inst, snapshot.vocab()), kept);
      }
      out.contributes = true;
      out.objective = r.loss;
      out.grad = std::move(r.grad);
      out.w_sum = r.stats.mean_w * static_cast<double>(r.stats.candidates);
      out.candidates = r.stats.candidates;
      out.clipped = r.stats.clipped;
      out.entropy = r.stats.candidate_entropy_bits;
      return out;
    }
    case Method::sft: {
      baselines::ObjectiveGrad r = baselines::sft_grad(snapshot, inst);
      out.contributes = true;
      out.objective = r.objective;
      out.grad = std::move(r.grad);
      return out;
    }
    case Method::raftpp: {
      if (itro::filter_valid(group, inst.answer).empty()) return out;
      baselines::ObjectiveGrad r = baselines::raftpp_grad(snapshot, snapshot, inst, group, cfg.baseline);
      out.contributes = true;
      out.objective = r.objective;
      out.grad = std::move(r.grad);
      out.clip_fraction = r.clip_fraction;
      return out;
    }
    case Method::grpo: {
      baselines::ObjectiveGrad r = baselines::grpo_grad(snapshot, snapshot, reference, inst, group, cfg.baseline);
      out.contributes = true;
      out.objective = r.objective;
      out.grad = std::move(r.grad);
      out.clip_fraction = r.clip_fraction;
      out.kl_penalty = r.kl_penalty;
      return out;
    }
    case Method::gpg: {
      baselines::ObjectiveGrad r = baselines::gpg_grad(snapshot, inst, group, cfg.baseline);
      out.contributes = true;
      out.objective = r.objective;
      out.grad = std::move(r.grad);
      return out;
    }
    case Method::latro: {
      baselines::ObjectiveGrad r = baselines::latro_grad(snapshot, reference, inst, group, cfg.baseline);
      out.contributes = true;
      out.objective = r.objective;
      out.grad = std::move(r.grad);
      out.kl_penalty = r.kl_penalty;
      return out;
    }
  }
  return out;
}

}  // namespace

Policy initial_policy(const RunConfig& config) {
  Rng rng = Rng::derive(config.seed, {kInitStream});
  return init_policy(config.arch, config.task, config.init, rng, config.context_window);
}

std::vector<TaskInstance> eval_instances(const RunConfig& config) {
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(config.eval.instances));
  for (int i = 0; i < config.eval.instances; ++i) {
    Rng rng = Rng::derive(config.seed, {kEvalSetStream, static_cast<std::uint64_t>(i)});
    out.push_back(sample_instance(config.task, rng));
  }
  return out;
}

double mean_correct_length(const Policy& policy, std::span<const TaskInstance> instances) {
  double total = 0.0;
  int counted = 0;
  for (const TaskInstance& inst : instances) {
    try {
      total += metrics::expected_correct_length(policy, inst, policy.task().max_rationale_len);
      ++counted;
    } catch (const std::domain_error&) {
    }
  }
  return counted ? total / counted : 0.0;
}

double greedy_or_sampled_accuracy(const Policy& policy, const RunConfig& config,
                                  std::span<const TaskInstance> instances, std::uint64_t salt) {
  Rng rng = Rng::derive(config.seed, {kEvalDrawStream, salt});
  return metrics::eval_accuracy(policy, instances, config.eval.decode, rng);
}

TrainingReport train(const RunConfig& config, const TrainHooks& hooks, const Policy* reference_policy) {
  Policy policy = initial_policy(config);
  const Policy reference = reference_policy ? *reference_policy : policy;
  if (reference.num_params() != policy.num_params() || reference.arch() != policy.arch()) {
    throw std::invalid_argument("dimension mismatch: reference policy does not match the run's policy");
  }
  const std::vector<TaskInstance> eval_set = eval_instances(config);

  TrainingReport report{{}, policy, 0.0, 0.0, 0.0, 0.0, 0};
  report.initial_accuracy = greedy_or_sampled_accuracy(policy, config, eval_set, 0);
  report.initial_correct_len = mean_correct_length(policy, eval_set);
  report.final_accuracy = report.initial_accuracy;
  report.final_correct_len = report.initial_correct_len;

  const int batch = config.batch_size;
  const int workers = std::clamp(config.workers, 1, batch);
  std::vector<QueryOutcome> outcomes(static_cast<std::size_t>(batch));

  for (int step = 1; step <= config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const Policy snapshot = policy;  // θ_old, read-only for the step

    auto work = [&](int first) {
      for (int q = first; q < batch; q += workers) {
        outcomes[static_cast<std::size_t>(q)] = run_query(config, snapshot, reference, step, q);
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }

    MetricsRecord rec;
    rec.step = step;
    rec.method = to_string(config.method);
    GradientVector direction(policy.num_params());
    int contributing = 0;
    double objective = 0.0, reward = 0.0, length = 0.0, w_sum = 0.0, entropy = 0.0;
    double clip_frac = 0.0, kl = 0.0;
    int rollouts = 0, valid = 0;
    std::size_t candidates = 0, clipped = 0;
    for (const QueryOutcome& o : outcomes) {
      rollouts += o.rollouts;
      valid += o.valid;
      reward += o.reward_sum;
      length += o.length_sum;
      if (!o.contributes) continue;
      ++contributing;
      objective += o.objective;
      direction += o.grad;
      w_sum += o.w_sum;
      candidates += o.candidates;
      clipped += o.clipped;
      entropy += o.entropy;
      clip_frac += o.clip_fraction;
      kl += o.kl_penalty;
    }
    rec.contributing_queries = contributing;
    rec.mean_reward = rollouts ? reward / rollouts : 0.0;
    rec.valid_fraction = rollouts ? static_cast<double>(valid) / rollouts : 0.0;
    rec.mean_rationale_len = rollouts ? length / rollouts : 0.0;
    rec.skipped = contributing == 0;
    if (rec.skipped) {
      ++report.skipped_steps;
    } else {
      const double inv = 1.0 / contributing;
      rec.objective_value = objective * inv;
      if (config.learning_rate() != 0.0) {
        const double scale = config.learning_rate() * inv;
        auto params = policy.params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i] += scale * direction[i];
      }
      switch (config.method) {
        case Method::itro:
          rec.mean_w = candidates ? w_sum / static_cast<double>(candidates) : 0.0;
          rec.clip_fraction = candidates ? static_cast<double>(clipped) / static_cast<double>(candidates) : 0.0;
          rec.candidate_entropy_bits = entropy * inv;
          break;
        case Method::raftpp:
          rec.clip_fraction = clip_frac * inv;
          break;
        case Method::grpo:
          rec.clip_fraction = clip_frac * inv;
          rec.kl_penalty = kl * inv;
          break;
        case Method::latro:
          rec.kl_penalty = kl * inv;
          break;
        default:
          break;
      }
    }

    const bool last = step == config.steps;
    if (step % config.eval_every == 0 || last) {
      rec.accuracy = greedy_or_sampled_accuracy(policy, config, eval_set, static_cast<std::uint64_t>(step));
      rec.mean_correct_len = mean_correct_length(policy, eval_set);
      report.final_accuracy = *rec.accuracy;
      report.final_correct_len = *rec.mean_correct_len;
    }
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_record) hooks.on_record(rec);
    if (hooks.on_checkpoint && (step % config.eval_every == 0 || last)) {
      hooks.on_checkpoint(step, policy, last);
    }
    report.records.push_back(std::move(rec));
  }
  report.final_policy = std::move(policy);
  return report;
}

}  // namespace itrolab
