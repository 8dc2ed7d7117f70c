#include "itrolab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace itrolab::baselines {
namespace {

std::vector<double> rewards_of(const itro::RolloutGroup& group) {
  std::vector<double> r;
  r.reserve(group.rationales.size());
  for (const itro::Rationale& x : group.rationales) r.push_back(static_cast<double>(x.reward));
  return r;
}

// onehot(token) - p
std::vector<double> score(const Distribution& p, Token token) {
  std::vector<double> d(p.probs.size());
  for (std::size_t b = 0; b < d.size(); ++b) d[b] = -p[b];
  d[static_cast<std::size_t>(token)] += 1.0;
  return d;
}

Sequence readout_prefix(const Policy& policy, std::span<const Token> z) {
  Sequence body;
  for (Token t : z) {
    if (t == policy.vocab().eos()) break;
    body.push_back(t);
  }
  body.push_back(policy.vocab().ans());
  return body;
}

// Token-level clipped surrogate min(r A, clip(r, 1-eps, 1+eps) A) for one
// rationale, accumulating (scale * d/dθ) into grad. Returns the summed value
// and the number of tokens on the constant (clipped) branch.
std::pair<double, int> clipped_tokens(const Policy& policy, const Policy& rollout_policy,
                                      const Context& ctx, std::span<const Token> z,
                                      double advantage, double eps, double scale,
                                      GradientVector& grad) {
  double value = 0.0;
  int clipped = 0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    const auto prefix = z.first(t);
    const std::size_t a = static_cast<std::size_t>(z[t]);
    const Distribution p = next_dist(policy, ctx, prefix);
    const Distribution p_old = next_dist(rollout_policy, ctx, prefix);
    if (!(p_old[a] > 0.0)) throw std::domain_error("rollout policy assigns zero probability to a sampled token");
    const double r = p[a] / p_old[a];
    const double rc = std::clamp(r, 1.0 - eps, 1.0 + eps);
    const double unclipped = r * advantage;
    const double clipped_value = rc * advantage;
    value += std::min(unclipped, clipped_value);
    const bool constant = (advantage >= 0.0 && r > 1.0 + eps) || (advantage < 0.0 && r < 1.0 - eps);
    if (constant) {
      if (advantage != 0.0) ++clipped;
      continue;
    }
    // d(r A) = A r grad log p(a)
    policy.add_logit_grad(ctx, prefix, score(p, z[t]), scale * advantage * r, grad);
  }
  return {value, clipped};
}

}  // namespace

void BaselineConfig::validate() const {
  if (!(clip_eps > 0.0)) throw std::invalid_argument("baseline.clip_eps must be > 0");
  if (!(kl_beta >= 0.0)) throw std::invalid_argument("baseline.kl_beta must be ≥ 0");
  if (!(latro_kl_coef >= 0.0)) throw std::invalid_argument("baseline.latro_kl_coef must be ≥ 0");
  if (!(advantage_epsilon > 0.0)) throw std::invalid_argument("baseline.advantage_epsilon must be > 0");
  if (f_norm == NormMode::fixed && !(f_norm_constant > 0.0)) {
    throw std::invalid_argument("baseline.f_norm_constant must be > 0");
  }
}

double state_kl(std::span<const double> p, std::span<const double> r, std::span<double> dlogits) {
  double kl = 0.0;
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b] > 0.0) kl += p[b] * (std::log(p[b]) - std::log(r[b]));
  }
  for (std::size_t b = 0; b < p.size(); ++b) {
    dlogits[b] = p[b] > 0.0 ? p[b] * (std::log(p[b]) - std::log(r[b]) - kl) : 0.0;
  }
  return kl;
}

ObjectiveGrad sft_grad(const Policy& policy, const TaskInstance& inst) {
  if (!inst.golden) throw std::invalid_argument("sft requires a golden rationale");
  const Sequence& z = *inst.golden;
  const Context ctx = forward_context(inst);
  const double inv = 1.0 / static_cast<double>(z.size());
  ObjectiveGrad out;
  out.objective = inv * logprob(policy, ctx, z);
  out.grad = grad_logprob(policy, ctx, z);
  out.grad *= inv;
  return out;
}

double latro_reward(const Policy& policy, const TaskInstance& inst, std::span<const Token> z) {
  const Sequence prefix = readout_prefix(policy, z);
  const Distribution d = next_dist(policy, forward_context(inst), prefix);
  return std::log(d[static_cast<std::size_t>(inst.answer)]);
}

std::vector<double> latro_advantages(const Policy& policy, const TaskInstance& inst,
                                     const itro::RolloutGroup& group) {
  const std::size_t g = group.rationales.size();
  if (g < 2) throw std::invalid_argument("latro needs a group of at least 2 rationales");
  std::vector<double> rewards;
  double total = 0.0;
  for (const itro::Rationale& r : group.rationales) {
    rewards.push_back(latro_reward(policy, inst, r.z));
    total += rewards.back();
  }
  std::vector<double> adv(g);
  for (std::size_t i = 0; i < g; ++i) {
    adv[i] = rewards[i] - (total - rewards[i]) / static_cast<double>(g - 1);
  }
  return adv;
}

ObjectiveGrad latro_grad(const Policy& policy, const Policy& initial_policy,
                         const TaskInstance& inst, const itro::RolloutGroup& group,
                         const BaselineConfig& config,
                         std::optional<std::span<const double>> advantages) {
  const std::size_t g = group.rationales.size();
  if (g < 2) throw std::invalid_argument("latro needs a group of at least 2 rationales");
  std::vector<double> adv;
  if (advantages) {
    if (advantages->size() != g) throw std::invalid_argument("advantage count does not match group");
    adv.assign(advantages->begin(), advantages->end());
  } else {
    adv = latro_advantages(policy, inst, group);
  }
  const Context ctx = forward_context(inst);
  const double inv_g = 1.0 / static_cast<double>(g);
  ObjectiveGrad out;
  out.grad = GradientVector(policy.num_params());
  std::vector<double> dkl(static_cast<std::size_t>(policy.vocab_size()));
  double kl_total = 0.0;
  std::size_t kl_states = 0;
  for (std::size_t i = 0; i < g; ++i) {
    const Sequence& z = group.rationales[i].z;
    out.objective += inv_g * adv[i] * logprob(policy, ctx, z);
    out.grad.axpy(inv_g * adv[i], grad_logprob(policy, ctx, z));

    const Sequence readout = readout_prefix(policy, z);
    const Distribution d = next_dist(policy, ctx, readout);
    out.objective += inv_g * std::log(d[static_cast<std::size_t>(inst.answer)]);
    if (config.latro_answer_grad) {
      policy.add_logit_grad(ctx, readout, score(d, inst.answer), inv_g, out.grad);
    }

    for (std::size_t t = 0; t < z.size(); ++t) {
      const auto prefix = std::span<const Token>(z).first(t);
      const Distribution p = next_dist(policy, ctx, prefix);
      const Distribution p0 = next_dist(initial_policy, ctx, prefix);
      const double kl = state_kl(p.probs, p0.probs, dkl);
      kl_total += kl;
      ++kl_states;
      out.objective -= config.latro_kl_coef * inv_g * kl;
      policy.add_logit_grad(ctx, prefix, dkl, -config.latro_kl_coef * inv_g, out.grad);
    }
  }
  out.kl_penalty = kl_states ? kl_total / static_cast<double>(kl_states) : 0.0;
  return out;
}

ObjectiveGrad raftpp_grad(const Policy& policy, const Policy& rollout_policy,
                          const TaskInstance& inst, const itro::RolloutGroup& group,
                          const BaselineConfig& config) {
  const std::vector<Sequence> kept = itro::filter_valid(group, inst.answer);
  if (kept.empty()) throw std::invalid_argument("empty filtered set");
  const Context ctx = forward_context(inst);
  ObjectiveGrad out;
  out.grad = GradientVector(policy.num_params());
  const double inv_n = 1.0 / static_cast<double>(kept.size());
  int clipped = 0;
  std::size_t tokens = 0;
  for (const Sequence& z : kept) {
    const double scale = inv_n / static_cast<double>(z.size());
    const auto [value, c] =
        clipped_tokens(policy, rollout_policy, ctx, z, 1.0, config.clip_eps, scale, out.grad);
    out.objective += scale * value;
    clipped += c;
    tokens += z.size();
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
  return out;
}

std::vector<double> group_advantages(std::span<const double> rewards, NormMode mode,
                                     double fixed_constant, double advantage_epsilon) {
  if (rewards.empty()) throw std::invalid_argument("group_advantages: empty reward list");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double denom = fixed_constant;
  if (mode == NormMode::std_dev) {
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    denom = std::sqrt(var / n) + advantage_epsilon;
  }
  std::vector<double> adv;
  adv.reserve(rewards.size());
  for (double r : rewards) adv.push_back((r - mean) / denom);
  return adv;
}

ObjectiveGrad grpo_grad(const Policy& policy, const Policy& rollout_policy,
                        const Policy& reference_policy, const TaskInstance& inst,
                        const itro::RolloutGroup& group, const BaselineConfig& config) {
  const std::size_t g = group.rationales.size();
  if (g < 1) throw std::invalid_argument("grpo needs a non-empty group");
  const std::vector<double> rewards = rewards_of(group);
  const std::vector<double> adv = group_advantages(rewards, NormMode::std_dev, 1.0, config.advantage_epsilon);
  const Context ctx = forward_context(inst);
  ObjectiveGrad out;
  out.grad = GradientVector(policy.num_params());
  std::vector<double> dkl(static_cast<std::size_t>(policy.vocab_size()));
  int clipped = 0;
  std::size_t tokens = 0;
  double kl_total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const Sequence& z = group.rationales[i].z;
    const double scale = 1.0 / (static_cast<double>(g) * static_cast<double>(z.size()));
    const auto [value, c] =
        clipped_tokens(policy, rollout_policy, ctx, z, adv[i], config.clip_eps, scale, out.grad);
    out.objective += scale * value;
    clipped += c;
    tokens += z.size();
    for (std::size_t t = 0; t < z.size(); ++t) {
      const auto prefix = std::span<const Token>(z).first(t);
      const Distribution p = next_dist(policy, ctx, prefix);
      const Distribution r = next_dist(reference_policy, ctx, prefix);
      const double kl = state_kl(p.probs, r.probs, dkl);
      kl_total += kl;
      if (config.kl_beta != 0.0) {
        out.objective -= scale * config.kl_beta * kl;
        policy.add_logit_grad(ctx, prefix, dkl, -scale * config.kl_beta, out.grad);
      }
    }
  }
  out.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  out.kl_penalty = tokens ? kl_total / static_cast<double>(tokens) : 0.0;
  return out;
}

ObjectiveGrad gpg_grad(const Policy& policy, const TaskInstance& inst,
                       const itro::RolloutGroup& group, const BaselineConfig& config) {
  if (group.rationales.empty()) throw std::invalid_argument("gpg needs a non-empty group");
  const std::vector<double> adv = group_advantages(rewards_of(group), config.f_norm,
                                                   config.f_norm_constant, config.advantage_epsilon);
  const Context ctx = forward_context(inst);
  std::size_t total_len = 0;
  for (const itro::Rationale& r : group.rationales) total_len += r.z.size();
  const double inv = 1.0 / static_cast<double>(total_len);
  ObjectiveGrad out;
  out.grad = GradientVector(policy.num_params());
  for (std::size_t i = 0; i < group.rationales.size(); ++i) {
    if (adv[i] == 0.0) continue;
    const Sequence& z = group.rationales[i].z;
    out.objective += inv * adv[i] * logprob(policy, ctx, z);
    out.grad.axpy(inv * adv[i], grad_logprob(policy, ctx, z));
  }
  return out;
}

}  // namespace itrolab::baselines
