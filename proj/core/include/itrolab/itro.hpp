#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "itrolab/policy.hpp"
#include "itrolab/rng.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab::itro {

struct Rationale {
  Sequence z;
  int reward = 0;      // 1 iff answer_of(z) == y
  bool valid = false;  // answer_of(z) is defined
};

struct RolloutGroup {
  std::uint64_t query_index = 0;
  std::vector<Rationale> rationales;

  double mean_reward() const;
  double mean_length() const;
};

// How Eq.-7-style per-token terms from several valid rationales are combined.
enum class Pooling {
  per_rationale,  // 1/(|z| n) per rationale, then the mean over rationales
  pooled,         // one pool: 1/(sum |z| * n)
};

// The tabular arch gives answer-conditioned states their own logits, so the
// estimated posterior only moves if it is trained directly. filtered_sft adds
// the length-normalized log-likelihood gradient of each valid rationale under
// the conditioned context; off leaves the posterior to whatever parameter
// sharing the arch has.
enum class TeacherUpdate { off, filtered_sft };

struct ItroConfig {
  int G = 4;
  int n = 5;
  double w_max = 200.0;
  double learning_rate = 0.05;
  double temperature = 0.6;
  int max_rationale_len = 4;
  bool stop_grad_through_w = true;
  Pooling pooling = Pooling::per_rationale;
  TeacherUpdate teacher_update = TeacherUpdate::filtered_sft;

  void validate() const;
};

RolloutGroup rollout_group(const Policy& policy, const TaskInstance& inst, int group_size,
                           double temperature, int max_len, Rng& rng,
                           std::uint64_t query_index = 0);

// Rationales with reward 1, order and duplicates preserved.
std::vector<Sequence> filter_valid(const RolloutGroup& group, Token y);

struct Correction {
  double w = 0.0;    // min(raw, w_max)
  double raw = 0.0;  // conditioned_prob / forward_prob
  double forward_prob = 0.0;
  double conditioned_prob = 0.0;
  bool clipped() const { return raw > w; }
};

// Throws "unsampleable candidate" when the forward probability is 0.
Correction correction_factor(const Policy& policy, const TaskInstance& inst,
                             std::span<const Token> z_prefix, Token token, double w_max);

struct Candidate {
  Token token = 0;
  double forward_prob = 0.0;
  double conditioned_prob = 0.0;
  double w = 0.0;
  double raw_ratio = 0.0;
  bool ground_truth = false;
};

struct CandidateStep {
  int position = 0;
  std::vector<Candidate> candidates;
  double forward_entropy_bits = 0.0;
};

// n-1 i.i.d. draws from the forward next-token distribution, then the
// ground-truth token once, last.
CandidateStep sample_candidates(const Policy& policy, const TaskInstance& inst,
                                std::span<const Token> z_prefix, Token gt_token, int n,
                                double w_max, Rng& rng);

struct StepStats {
  double mean_w = 0.0;
  double clip_fraction = 0.0;
  double candidate_entropy_bits = 0.0;
  std::size_t candidates = 0;
  std::size_t clipped = 0;
};

struct StepResult {
  double loss = 0.0;  // value of the weighted log-likelihood objective
  GradientVector grad;  // ascent direction
  StepStats stats;
};

// Throws "no valid rationales" on an empty set.
StepResult itro_step_grad(const Policy& policy, const TaskInstance& inst,
                          std::span<const Sequence> valid_rationales, const ItroConfig& config,
                          Rng& rng);

// Mean over rationales of (1/|z|) grad log pi(z | ctx).
GradientVector filtered_sft_grad(const Policy& policy, const Context& ctx,
                                 std::span<const Sequence> rationales);

// log pi(z | x ⊕ y) - log pi(z | x).
double sequence_log_weight(const Policy& policy, const TaskInstance& inst, std::span<const Token> z);

// Unclipped per-token log correction factors along z.
std::vector<double> token_log_weights(const Policy& policy, const TaskInstance& inst,
                                      std::span<const Token> z);

}  // namespace itrolab::itro
