#include "itrolab/itro.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace itrolab::itro {

void ItroConfig::validate() const {
  if (G < 1) throw std::invalid_argument("rollout.G must be ≥ 1");
  if (n < 1) throw std::invalid_argument("itro.n must be ≥ 1");
  if (!(w_max > 0.0)) throw std::invalid_argument("itro.clip_max must be > 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be ≥ 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("rollout.temperature must be > 0");
  if (max_rationale_len < 2) throw std::invalid_argument("task.max_rationale_len must be ≥ 2");
}

double RolloutGroup::mean_reward() const {
  if (rationales.empty()) return 0.0;
  double s = 0.0;
  for (const Rationale& r : rationales) s += r.reward;
  return s / static_cast<double>(rationales.size());
}

double RolloutGroup::mean_length() const {
  if (rationales.empty()) return 0.0;
  double s = 0.0;
  for (const Rationale& r : rationales) s += static_cast<double>(r.z.size());
  return s / static_cast<double>(rationales.size());
}

RolloutGroup rollout_group(const Policy& policy, const TaskInstance& inst, int group_size,
                           double temperature, int max_len, Rng& rng, std::uint64_t query_index) {
  if (group_size < 1) throw std::invalid_argument("rollout.G must be ≥ 1");
  RolloutGroup group;
  group.query_index = query_index;
  const Context ctx = forward_context(inst);
  for (int i = 0; i < group_size; ++i) {
    Rationale r;
    r.z = sample_sequence(policy, ctx, temperature, max_len, rng);
    const auto answer = answer_of(r.z, policy.vocab(), static_cast<std::size_t>(max_len));
    r.valid = answer.has_value();
    r.reward = (answer && *answer == inst.answer) ? 1 : 0;
    group.rationales.push_back(std::move(r));
  }
  return group;
}

std::vector<Sequence> filter_valid(const RolloutGroup& group, Token y) {
  (void)y;  // rewards were assigned against y at rollout time
  std::vector<Sequence> kept;
  for (const Rationale& r : group.rationales) {
    if (r.reward == 1) kept.push_back(r.z);
  }
  return kept;
}

Correction correction_factor(const Policy& policy, const TaskInstance& inst,
                             std::span<const Token> z_prefix, Token token, double w_max) {
  const Distribution p = next_dist(policy, forward_context(inst), z_prefix);
  const Distribution q = next_dist(policy, conditioned_context(inst, policy.vocab()), z_prefix);
  Correction c;
  c.forward_prob = p[static_cast<std::size_t>(token)];
  c.conditioned_prob = q[static_cast<std::size_t>(token)];
  if (!(c.forward_prob > 0.0)) throw std::domain_error("unsampleable candidate");
  c.raw = c.conditioned_prob / c.forward_prob;
  c.w = std::min(c.raw, w_max);
  return c;
}

namespace {

CandidateStep build_step(const Distribution& p, const Distribution& q,
                         std::span<const Token> z_prefix, Token gt_token, int n, double w_max,
                         Rng& rng) {
  CandidateStep step;
  step.position = static_cast<int>(z_prefix.size());
  step.forward_entropy_bits = p.entropy_bits();
  auto make = [&](Token a, bool gt) {
    Candidate c;
    c.token = a;
    c.forward_prob = p[static_cast<std::size_t>(a)];
    c.conditioned_prob = q[static_cast<std::size_t>(a)];
    if (!(c.forward_prob > 0.0)) throw std::domain_error("unsampleable candidate");
    c.raw_ratio = c.conditioned_prob / c.forward_prob;
    c.w = std::min(c.raw_ratio, w_max);
    c.ground_truth = gt;
    return c;
  };
  step.candidates.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i + 1 < n; ++i) step.candidates.push_back(make(rng.categorical(p.probs), false));
  step.candidates.push_back(make(gt_token, true));
  return step;
}

}  // namespace

CandidateStep sample_candidates(const Policy& policy, const TaskInstance& inst,
                                std::span<const Token> z_prefix, Token gt_token, int n,
                                double w_max, Rng& rng) {
  if (n < 1) throw std::invalid_argument("itro.n must be ≥ 1");
  const Distribution p = next_dist(policy, forward_context(inst), z_prefix);
  const Distribution q = next_dist(policy, conditioned_context(inst, policy.vocab()), z_prefix);
  return build_step(p, q, z_prefix, gt_token, n, w_max, rng);
}

StepResult itro_step_grad(const Policy& policy, const TaskInstance& inst,
                          std::span<const Sequence> valid_rationales, const ItroConfig& config,
                          Rng& rng) {
  if (valid_rationales.empty()) throw std::invalid_argument("no valid rationales");
  const Context fwd = forward_context(inst);
  const Context cond = conditioned_context(inst, policy.vocab());
  const std::size_t v = static_cast<std::size_t>(policy.vocab_size());

  StepResult result;
  result.grad = GradientVector(policy.num_params());
  double w_sum = 0.0;
  double entropy_sum = 0.0;
  std::size_t positions = 0;
  std::size_t total_len = 0;
  for (const Sequence& z : valid_rationales) total_len += z.size();

  std::vector<double> d_fwd(v);
  std::vector<double> d_cond(v);
  for (const Sequence& z : valid_rationales) {
    if (z.empty()) throw std::invalid_argument("empty rationale");
    const double norm = config.pooling == Pooling::per_rationale
                            ? 1.0 / (static_cast<double>(z.size()) * config.n *
                                     static_cast<double>(valid_rationales.size()))
                            : 1.0 / (static_cast<double>(total_len) * config.n);
    for (std::size_t t = 0; t < z.size(); ++t) {
      const std::span<const Token> prefix(z.data(), t);
      const Distribution p = next_dist(policy, fwd, prefix);
      const Distribution q = next_dist(policy, cond, prefix);
      const CandidateStep step = build_step(p, q, prefix, z[t], config.n, config.w_max, rng);
      entropy_sum += step.forward_entropy_bits;
      ++positions;

      std::fill(d_fwd.begin(), d_fwd.end(), 0.0);
      std::fill(d_cond.begin(), d_cond.end(), 0.0);
      bool through_w = false;
      for (const Candidate& c : step.candidates) {
        const std::size_t a = static_cast<std::size_t>(c.token);
        const double log_p = std::log(c.forward_prob);
        result.loss += norm * c.w * log_p;
        w_sum += c.w;
        ++result.stats.candidates;
        if (c.raw_ratio > config.w_max) ++result.stats.clipped;
        // w * grad log p(a): w * (onehot(a) - p) on the forward state.
        for (std::size_t b = 0; b < v; ++b) d_fwd[b] -= c.w * p[b];
        d_fwd[a] += c.w;
        if (!config.stop_grad_through_w && c.raw_ratio <= config.w_max && c.w > 0.0) {
          // log p(a) * grad w, with grad w = w * (grad log q(a) - grad log p(a)).
          through_w = true;
          const double k = log_p * c.w;
          for (std::size_t b = 0; b < v; ++b) {
            d_cond[b] -= k * q[b];
            d_fwd[b] += k * p[b];
          }
          d_cond[a] += k;
          d_fwd[a] -= k;
        }
      }
      policy.add_logit_grad(fwd, prefix, d_fwd, norm, result.grad);
      if (through_w) policy.add_logit_grad(cond, prefix, d_cond, norm, result.grad);
    }
  }
  if (result.stats.candidates > 0) {
    const double count = static_cast<double>(result.stats.candidates);
    result.stats.mean_w = w_sum / count;
    result.stats.clip_fraction = static_cast<double>(result.stats.clipped) / count;
  }
  if (positions > 0) result.stats.candidate_entropy_bits = entropy_sum / static_cast<double>(positions);
  return result;
}

GradientVector filtered_sft_grad(const Policy& policy, const Context& ctx,
                                 std::span<const Sequence> rationales) {
  GradientVector g(policy.num_params());
  if (rationales.empty()) return g;
  const double inv = 1.0 / static_cast<double>(rationales.size());
  for (const Sequence& z : rationales) {
    g.axpy(inv / static_cast<double>(z.size()), grad_logprob(policy, ctx, z));
  }
  return g;
}

double sequence_log_weight(const Policy& policy, const TaskInstance& inst, std::span<const Token> z) {
  return logprob(policy, conditioned_context(inst, policy.vocab()), z) -
         logprob(policy, forward_context(inst), z);
}

std::vector<double> token_log_weights(const Policy& policy, const TaskInstance& inst,
                                      std::span<const Token> z) {
  std::vector<double> out;
  out.reserve(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    const Correction c = correction_factor(policy, inst, z.first(t), z[t],
                                           std::numeric_limits<double>::infinity());
    out.push_back(std::log(c.conditioned_prob) - std::log(c.forward_prob));
  }
  return out;
}

}  // namespace itrolab::itro
