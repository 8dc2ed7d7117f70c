#pragma once

#include <span>
#include <string>
#include <vector>

#include "itrolab/policy.hpp"
#include "itrolab/rng.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab::metrics {

enum class DecodeMode { greedy, sample };

struct Decode {
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;
  int k = 1;

  static Decode greedy() { return {}; }
  static Decode sample(double temperature, int k) { return {DecodeMode::sample, temperature, k}; }
  std::string describe() const;
};

// greedy: share of instances whose argmax rationale answers y.
// sample: mean over instances of (correct samples / k).
double eval_accuracy(const Policy& policy, std::span<const TaskInstance> instances,
                     const Decode& decode, Rng& rng);

// Mean sampled rationale length (EOS counted), k samples per instance.
double mean_rationale_length(const Policy& policy, std::span<const TaskInstance> instances, int k,
                             double temperature, Rng& rng);

// E[|z| | z in Z_y] under pi(z|x), by enumeration.
double expected_correct_length(const Policy& policy, const TaskInstance& inst, int max_len);

struct TokenAnnotation {
  int position = 0;
  Token token = 0;
  double forward_prob = 0.0;
  double conditioned_prob = 0.0;
  double w = 0.0;
  double entropy_bits = 0.0;
};

// Per-token forward/conditioned probabilities, clipped correction factor
// and forward entropy. Throws at the first zero forward probability.
std::vector<TokenAnnotation> annotate(const Policy& policy, const TaskInstance& inst,
                                      std::span<const Token> z, double w_max);

}  // namespace itrolab::metrics
