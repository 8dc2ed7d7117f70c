#pragma once

#include <optional>
#include <span>
#include <vector>

#include "itrolab/itro.hpp"
#include "itrolab/policy.hpp"
#include "itrolab/tasks.hpp"

// Comparison objectives over the same rollout substrate as ITRO. Every
// function returns the surrogate objective value at `policy` together with
// its ascent gradient; quantities computed from the rollout (rewards,
// advantages, old-policy probabilities) are held fixed.
namespace itrolab::baselines {

enum class NormMode { std_dev, fixed };

struct BaselineConfig {
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  double latro_kl_coef = 0.01;
  NormMode f_norm = NormMode::std_dev;
  double f_norm_constant = 1.0;
  double advantage_epsilon = 1e-8;
  // Include grad log pi(y | x, z) of the rationale reward itself.
  bool latro_answer_grad = true;

  void validate() const;
};

struct ObjectiveGrad {
  double objective = 0.0;
  GradientVector grad;
  double clip_fraction = 0.0;  // share of tokens whose gradient the clip suppressed
  double kl_penalty = 0.0;     // mean per-state KL to the reference
};

// Ascent gradient of (1/|z*|) log pi(z* | x). Throws without a golden rationale.
ObjectiveGrad sft_grad(const Policy& policy, const TaskInstance& inst);

// log pi(y | x, z) read out after the rationale body and an ANS marker.
double latro_reward(const Policy& policy, const TaskInstance& inst, std::span<const Token> z);

// Leave-one-out advantages R_i - mean_{j != i} R_j. Needs >= 2 rationales.
std::vector<double> latro_advantages(const Policy& policy, const TaskInstance& inst,
                                     const itro::RolloutGroup& group);

// (1/G) sum_i [A_i log pi(z_i|x) + R_i] - c * (1/G) sum_i sum_t KL(pi(.|s_it) || pi_0(.|s_it)).
// Advantages default to latro_advantages(policy, ...); pass them to evaluate
// the frozen-sample surrogate at a perturbed policy.
ObjectiveGrad latro_grad(const Policy& policy, const Policy& initial_policy,
                         const TaskInstance& inst, const itro::RolloutGroup& group,
                         const BaselineConfig& config,
                         std::optional<std::span<const double>> advantages = std::nullopt);

// Clipped importance-ratio surrogate over reward-1 rationales, advantage 1.
// Throws "empty filtered set" without positive samples.
ObjectiveGrad raftpp_grad(const Policy& policy, const Policy& rollout_policy,
                          const TaskInstance& inst, const itro::RolloutGroup& group,
                          const BaselineConfig& config);

// std: (r - mean) / (population std + eps); fixed: (r - mean) / c.
std::vector<double> group_advantages(std::span<const double> rewards, NormMode mode,
                                     double fixed_constant, double advantage_epsilon);

ObjectiveGrad grpo_grad(const Policy& policy, const Policy& rollout_policy,
                        const Policy& reference_policy, const TaskInstance& inst,
                        const itro::RolloutGroup& group, const BaselineConfig& config);

ObjectiveGrad gpg_grad(const Policy& policy, const TaskInstance& inst,
                       const itro::RolloutGroup& group, const BaselineConfig& config);

// Per-state KL(p || r) and its logit gradient p_b (log p_b - log r_b - KL).
double state_kl(std::span<const double> p, std::span<const double> r, std::span<double> dlogits);

}  // namespace itrolab::baselines
