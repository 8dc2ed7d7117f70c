#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "itrolab/policy.hpp"
#include "itrolab/tasks.hpp"

// Brute-force ground truth over the enumerable rationale space.
namespace itrolab::oracle {

// Largest sequence space enumerate() accepts, counted as V^T_max.
inline constexpr double kMaxEnumeration = 1e7;
// exp() of anything below this is treated as exactly zero.
inline constexpr double kUnderflowLog = -745.0;

struct RationaleEntry {
  Sequence z;
  double log_prob = 0.0;
  double prob = 0.0;
  // true when z ends at its first EOS; false for a T_max-long truncation.
  bool complete = false;
  std::optional<Token> answer;
};

// Every outcome of ancestral sampling with at most max_len tokens, in
// lexicographic token order. Masses partition unity.
struct RationaleSet {
  std::vector<RationaleEntry> entries;
  std::size_t underflow_count = 0;

  double total_mass() const;
};

RationaleSet enumerate(const Policy& policy, const Context& ctx, int max_len, int workers = 1);

// Sum of forward probabilities over Z_y.
double marginal(const Policy& policy, const TaskInstance& inst, int max_len);
double log_marginal(const Policy& policy, const TaskInstance& inst, int max_len);

using SequenceWeights = std::map<Sequence, double>;

// pi(z | x, y) on Z_y. Throws "answer unreachable" when the marginal is 0.
SequenceWeights true_posterior(const Policy& policy, const TaskInstance& inst, int max_len);

// sum_z weight(z) * grad log pi(z | x). Weights need not be normalized.
GradientVector weighted_grad_logprob(const Policy& policy, const Context& ctx,
                                     const SequenceWeights& weights);

// grad log pi(y|x) as sum_{z in Z_y} [pi(z|x) / pi(y|x)] grad log pi(z|x).
GradientVector mll_grad_exact(const Policy& policy, const TaskInstance& inst, int max_len);

// E_{z ~ pi(z|x,y)} [grad log pi(z|x)].
GradientVector posterior_grad_expect(const Policy& policy, const TaskInstance& inst, int max_len);

struct KlReport {
  double kl = 0.0;
  // Mass the answer-conditioned policy puts on complete sequences before
  // renormalization.
  double conditioned_complete_mass = 0.0;
  std::size_t support_size = 0;
  std::size_t underflow_count = 0;
};

// KL(pi(z|x,y) || pi(z|x ⊕ y)), with the conditioned sequence distribution
// renormalized over complete sequences of length <= max_len.
KlReport kl_true_vs_estimated(const Policy& policy, const TaskInstance& inst, int max_len);

// Sets the tabular blocks along z so that z has probability exactly 1 under
// ctx (off-path logits at -1000, whose exp underflows to 0).
void concentrate_on(Policy& policy, const Context& ctx, std::span<const Token> z);

using LossFn = std::function<double(const Policy&)>;

// Fourth-order central differences
// (8[f(θ+h e_i) - f(θ-h e_i)] - [f(θ+2h e_i) - f(θ-2h e_i)]) / 12h. When coords is given
// only those components are computed; the rest are left at 0.
GradientVector fd_grad(const LossFn& loss, const Policy& policy, double h,
                       std::optional<std::span<const std::size_t>> coords = std::nullopt);

struct GradientComparison {
  double max_abs_err = 0.0;
  // Over components whose analytic magnitude exceeds the floor.
  double max_rel_err = 0.0;
  // Largest absolute error among components at or below the floor.
  double max_small_abs_err = 0.0;
  std::size_t components_checked = 0;
};

GradientComparison compare_gradients(const GradientVector& analytic, const GradientVector& numeric,
                                     double magnitude_floor = 1e-8,
                                     std::optional<std::span<const std::size_t>> coords = std::nullopt);

}  // namespace itrolab::oracle
