#include "itrolab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "itrolab/oracle.hpp"

namespace itrolab::metrics {

std::string Decode::describe() const {
  if (mode == DecodeMode::greedy) return "greedy";
  char buf[64];
  std::snprintf(buf, sizeof buf, "sample(%.17g,%d)", temperature, k);
  return buf;
}

double eval_accuracy(const Policy& policy, std::span<const TaskInstance> instances,
                     const Decode& decode, Rng& rng) {
  if (instances.empty()) throw std::invalid_argument("eval_accuracy: no instances");
  const int max_len = policy.task().max_rationale_len;
  const auto correct = [&](const Sequence& z, const TaskInstance& inst) {
    const auto a = answer_of(z, policy.vocab(), static_cast<std::size_t>(max_len));
    return a && *a == inst.answer;
  };
  double total = 0.0;
  for (const TaskInstance& inst : instances) {
    const Context ctx = forward_context(inst);
    if (decode.mode == DecodeMode::greedy) {
      total += correct(greedy_sequence(policy, ctx, max_len), inst) ? 1.0 : 0.0;
    } else {
      if (decode.k < 1) throw std::invalid_argument("eval.k must be ≥ 1");
      int hits = 0;
      for (int i = 0; i < decode.k; ++i) {
        hits += correct(sample_sequence(policy, ctx, decode.temperature, max_len, rng), inst);
      }
      total += static_cast<double>(hits) / decode.k;
    }
  }
  return total / static_cast<double>(instances.size());
}

double mean_rationale_length(const Policy& policy, std::span<const TaskInstance> instances, int k,
                             double temperature, Rng& rng) {
  if (k < 1) throw std::invalid_argument("mean_rationale_length: k must be ≥ 1");
  if (instances.empty()) throw std::invalid_argument("mean_rationale_length: no instances");
  const int max_len = policy.task().max_rationale_len;
  double total = 0.0;
  for (const TaskInstance& inst : instances) {
    const Context ctx = forward_context(inst);
    for (int i = 0; i < k; ++i) {
      total += static_cast<double>(sample_sequence(policy, ctx, temperature, max_len, rng).size());
    }
  }
  return total / (static_cast<double>(instances.size()) * k);
}

double expected_correct_length(const Policy& policy, const TaskInstance& inst, int max_len) {
  const oracle::RationaleSet set = oracle::enumerate(policy, forward_context(inst), max_len);
  double mass = 0.0;
  double len = 0.0;
  for (const oracle::RationaleEntry& e : set.entries) {
    if (e.complete && e.answer && *e.answer == inst.answer) {
      mass += e.prob;
      len += e.prob * static_cast<double>(e.z.size());
    }
  }
  if (!(mass > 0.0)) throw std::domain_error("answer unreachable");
  return len / mass;
}

std::vector<TokenAnnotation> annotate(const Policy& policy, const TaskInstance& inst,
                                      std::span<const Token> z, double w_max) {
  if (z.empty()) throw std::invalid_argument("annotate: empty rationale");
  const Context fwd = forward_context(inst);
  const Context cond = conditioned_context(inst, policy.vocab());
  std::vector<TokenAnnotation> out;
  for (std::size_t t = 0; t < z.size(); ++t) {
    const auto prefix = z.first(t);
    const Distribution p = next_dist(policy, fwd, prefix);
    const Distribution q = next_dist(policy, cond, prefix);
    TokenAnnotation a;
    a.position = static_cast<int>(t);
    a.token = z[t];
    a.forward_prob = p[static_cast<std::size_t>(z[t])];
    a.conditioned_prob = q[static_cast<std::size_t>(z[t])];
    if (!(a.forward_prob > 0.0)) {
      throw std::domain_error("zero forward probability at position " + std::to_string(t));
    }
    a.w = std::min(a.conditioned_prob / a.forward_prob, w_max);
    a.entropy_bits = std::min(p.entropy_bits(), std::log2(static_cast<double>(p.size())));
    out.push_back(a);
  }
  return out;
}

}  // namespace itrolab::metrics
