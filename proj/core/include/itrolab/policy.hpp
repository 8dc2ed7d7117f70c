#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "itrolab/rng.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab {

enum class Arch { tabular, linear };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

// Conditioning prefix. Forward contexts hold the query x; answer-conditioned
// contexts hold x ++ [ANS, y, SEP].
struct Context {
  Sequence prefix;
  bool conditioned = false;
};

Context forward_context(const TaskInstance& inst);
Context conditioned_context(const TaskInstance& inst, const Vocabulary& vocab);

struct Distribution {
  std::vector<double> probs;

  double operator[](std::size_t i) const { return probs[i]; }
  std::size_t size() const { return probs.size(); }
  double entropy_bits() const;
};

// Same shape as the policy parameters.
struct GradientVector {
  std::vector<double> values;

  GradientVector() = default;
  explicit GradientVector(std::size_t n) : values(n, 0.0) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  GradientVector& operator+=(const GradientVector& other);
  GradientVector& operator-=(const GradientVector& other);
  GradientVector& operator*=(double s);
  void axpy(double a, const GradientVector& x);

  double inf_norm() const;
  double l2_norm() const;
  bool all_finite() const;
};

GradientVector operator-(GradientVector a, const GradientVector& b);

// Autoregressive next-token policy over the rationale alphabet (digits and
// EOS). Two parameterizations:
//
//  tabular  one logit block per (context, z_prefix) state. Forward and
//           answer-conditioned contexts own separate blocks. Addressable
//           prefixes are digit strings shorter than T_max, plus digit
//           strings of length <= T_max followed by ANS (answer read-out).
//  linear   logits = bias + sum over the last k tokens of the concatenated
//           context/prefix of a per-slot one-hot weight row. Forward and
//           conditioned contexts share every weight.
class Policy {
 public:
  static Policy tabular(const TaskFamilySpec& spec);
  static Policy linear(const TaskFamilySpec& spec, int context_window);

  Arch arch() const { return arch_; }
  const TaskFamilySpec& task() const { return spec_; }
  const Vocabulary& vocab() const { return vocab_; }
  int vocab_size() const { return vocab_.output_size(); }
  int context_window() const { return window_; }

  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  void set_params(std::vector<double> params);

  void logits(const Context& ctx, std::span<const Token> z_prefix, std::span<double> out) const;

  // Pulls a logit-space gradient back onto the parameters:
  // grad += scale * d(logits)/d(theta)^T * dlogits.
  void add_logit_grad(const Context& ctx, std::span<const Token> z_prefix,
                      std::span<const double> dlogits, double scale,
                      GradientVector& grad) const;

  // Logit block of a tabular state. Throws for the linear arch.
  std::span<double> tabular_state(const Context& ctx, std::span<const Token> z_prefix);
  std::span<const double> tabular_state(const Context& ctx, std::span<const Token> z_prefix) const;
  std::size_t tabular_num_states() const;
  // Half-open parameter range owned by one tabular context.
  std::pair<std::size_t, std::size_t> tabular_context_range(const Context& ctx) const;

 private:
  Policy(Arch arch, const TaskFamilySpec& spec, int window);

  std::size_t tabular_offset(const Context& ctx, std::span<const Token> z_prefix) const;
  std::size_t tabular_context_index(const Context& ctx) const;
  std::size_t tabular_prefix_index(std::span<const Token> z_prefix) const;
  Token linear_feature(const Context& ctx, std::span<const Token> z_prefix, int slot) const;

  Arch arch_;
  TaskFamilySpec spec_;
  Vocabulary vocab_;
  int window_ = 0;
  // tabular geometry
  std::size_t forward_contexts_ = 0;
  std::size_t generation_prefixes_ = 0;
  std::size_t prefixes_per_context_ = 0;
  std::vector<double> params_;
};

enum class InitKind { uniform, seeded_noise };

struct PolicyInit {
  InitKind kind = InitKind::uniform;
  double sigma = 0.0;
};

Policy init_policy(Arch arch, const TaskFamilySpec& spec, PolicyInit init, Rng& rng,
                   int context_window = 3);

// Copies every forward-context tabular block onto the matching
// answer-conditioned blocks, making both distributions identical.
void tie_conditioned_to_forward(Policy& policy);

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

Distribution next_dist(const Policy& policy, const Context& ctx, std::span<const Token> z_prefix);

double logprob(const Policy& policy, const Context& ctx, std::span<const Token> z);

GradientVector grad_logprob(const Policy& policy, const Context& ctx, std::span<const Token> z);

// Ancestral sampling with logits divided by temperature; stops at EOS or
// max_len tokens.
Sequence sample_sequence(const Policy& policy, const Context& ctx, double temperature,
                         int max_len, Rng& rng);

// Argmax decoding, lowest token id on ties.
Sequence greedy_sequence(const Policy& policy, const Context& ctx, int max_len);

}  // namespace itrolab
