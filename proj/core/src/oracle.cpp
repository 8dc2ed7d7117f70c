#include "itrolab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace itrolab::oracle {
namespace {

struct Walker {
  const Policy& policy;
  const Context& ctx;
  int max_len;
  Token eos;
  RationaleSet out;
  std::vector<double> logits;

  void emit(const Sequence& z, double lp, bool complete) {
    RationaleEntry e;
    e.z = z;
    e.log_prob = lp;
    if (lp < kUnderflowLog) {
      e.prob = 0.0;
      ++out.underflow_count;
    } else {
      e.prob = std::exp(lp);
    }
    e.complete = complete;
    e.answer = complete ? answer_of(z, policy.vocab()) : std::nullopt;
    out.entries.push_back(std::move(e));
  }

  void visit(Sequence& prefix, double lp) {
    policy.logits(ctx, prefix, logits);
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    const std::vector<double> local = logits;
    for (Token a = 0; a < policy.vocab_size(); ++a) {
      const double child = lp + local[static_cast<std::size_t>(a)] - lse;
      prefix.push_back(a);
      if (a == eos) {
        emit(prefix, child, true);
      } else if (static_cast<int>(prefix.size()) == max_len) {
        emit(prefix, child, false);
      } else {
        visit(prefix, child);
      }
      prefix.pop_back();
    }
  }
};

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

// Log-probabilities of the members of Z_y, in enumeration order.
std::vector<const RationaleEntry*> valid_entries(const RationaleSet& set, Token y) {
  std::vector<const RationaleEntry*> out;
  for (const RationaleEntry& e : set.entries) {
    if (e.complete && e.answer && *e.answer == y) out.push_back(&e);
  }
  return out;
}

}  // namespace

double RationaleSet::total_mass() const {
  double s = 0.0;
  for (const RationaleEntry& e : entries) s += e.prob;
  return s;
}

RationaleSet enumerate(const Policy& policy, const Context& ctx, int max_len, int workers) {
  if (max_len < 1) throw std::invalid_argument("enumerate: max_len must be ≥ 1");
  if (std::pow(static_cast<double>(policy.vocab_size()), max_len) > kMaxEnumeration) {
    throw std::invalid_argument("enumerate: sequence space exceeds the enumeration bound");
  }
  const Token eos = policy.vocab().eos();
  const int v = policy.vocab_size();

  // Root distribution, then one subtree per first token. Subtrees are merged
  // in token order so the result does not depend on the worker count.
  std::vector<double> root(static_cast<std::size_t>(v));
  policy.logits(ctx, {}, root);
  const double lse = log_sum_exp(root);

  std::vector<RationaleSet> parts(static_cast<std::size_t>(v));
  auto run_subtree = [&](Token a) {
    Walker w{policy, ctx, max_len, eos, {}, std::vector<double>(static_cast<std::size_t>(v))};
    Sequence prefix{a};
    const double lp = root[static_cast<std::size_t>(a)] - lse;
    if (a == eos) {
      w.emit(prefix, lp, true);
    } else if (max_len == 1) {
      w.emit(prefix, lp, false);
    } else {
      w.visit(prefix, lp);
    }
    parts[static_cast<std::size_t>(a)] = std::move(w.out);
  };

  workers = std::clamp(workers, 1, v);
  if (workers == 1) {
    for (Token a = 0; a < v; ++a) run_subtree(a);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (Token a = w; a < v; a += workers) run_subtree(a);
      });
    }
  }

  RationaleSet out;
  for (RationaleSet& part : parts) {
    out.underflow_count += part.underflow_count;
    for (RationaleEntry& e : part.entries) out.entries.push_back(std::move(e));
  }
  return out;
}

double log_marginal(const Policy& policy, const TaskInstance& inst, int max_len) {
  const RationaleSet set = enumerate(policy, forward_context(inst), max_len);
  std::vector<double> lps;
  for (const RationaleEntry* e : valid_entries(set, inst.answer)) lps.push_back(e->log_prob);
  return log_sum_exp(lps);
}

double marginal(const Policy& policy, const TaskInstance& inst, int max_len) {
  const double lm = log_marginal(policy, inst, max_len);
  return lm < kUnderflowLog ? 0.0 : std::exp(lm);
}

SequenceWeights true_posterior(const Policy& policy, const TaskInstance& inst, int max_len) {
  const RationaleSet set = enumerate(policy, forward_context(inst), max_len);
  const auto valid = valid_entries(set, inst.answer);
  std::vector<double> lps;
  for (const RationaleEntry* e : valid) lps.push_back(e->log_prob);
  const double lm = log_sum_exp(lps);
  if (!(lm >= kUnderflowLog)) throw std::domain_error("answer unreachable");
  SequenceWeights post;
  for (const RationaleEntry* e : valid) post[e->z] = std::exp(e->log_prob - lm);
  return post;
}

GradientVector weighted_grad_logprob(const Policy& policy, const Context& ctx,
                                     const SequenceWeights& weights) {
  GradientVector g(policy.num_params());
  for (const auto& [z, w] : weights) {
    if (w == 0.0) continue;
    g.axpy(w, grad_logprob(policy, ctx, z));
  }
  return g;
}

GradientVector mll_grad_exact(const Policy& policy, const TaskInstance& inst, int max_len) {
  const Context ctx = forward_context(inst);
  const RationaleSet set = enumerate(policy, ctx, max_len);
  const auto valid = valid_entries(set, inst.answer);
  double m = 0.0;
  for (const RationaleEntry* e : valid) m += e->prob;
  if (!(m > 0.0)) throw std::domain_error("answer unreachable");
  GradientVector g(policy.num_params());
  for (const RationaleEntry* e : valid) {
    if (e->prob == 0.0) continue;
    g.axpy(e->prob / m, grad_logprob(policy, ctx, e->z));
  }
  return g;
}

GradientVector posterior_grad_expect(const Policy& policy, const TaskInstance& inst, int max_len) {
  return weighted_grad_logprob(policy, forward_context(inst), true_posterior(policy, inst, max_len));
}

KlReport kl_true_vs_estimated(const Policy& policy, const TaskInstance& inst, int max_len) {
  const SequenceWeights p = true_posterior(policy, inst, max_len);
  const RationaleSet cond =
      enumerate(policy, conditioned_context(inst, policy.vocab()), max_len);

  std::vector<double> complete_lps;
  std::map<Sequence, double> q_log;
  for (const RationaleEntry& e : cond.entries) {
    if (!e.complete) continue;
    complete_lps.push_back(e.log_prob);
    q_log[e.z] = e.log_prob;
  }
  const double log_norm = log_sum_exp(complete_lps);

  KlReport report;
  report.conditioned_complete_mass = std::exp(log_norm);
  report.underflow_count = cond.underflow_count;
  double kl = 0.0;
  for (const auto& [z, pz] : p) {
    if (pz == 0.0) continue;
    ++report.support_size;
    const auto it = q_log.find(z);
    const double lq = it == q_log.end() ? -INFINITY : it->second - log_norm;
    if (lq < kUnderflowLog) throw std::domain_error("absolute-continuity violated");
    kl += pz * (std::log(pz) - lq);
  }
  // Gibbs' inequality; negative values are rounding.
  report.kl = std::max(kl, 0.0);
  return report;
}

void concentrate_on(Policy& policy, const Context& ctx, std::span<const Token> z) {
  if (policy.arch() != Arch::tabular) throw std::invalid_argument("concentrate_on needs a tabular policy");
  for (std::size_t t = 0; t < z.size(); ++t) {
    std::span<double> block = policy.tabular_state(ctx, z.first(t));
    for (std::size_t v = 0; v < block.size(); ++v) block[v] = static_cast<Token>(v) == z[t] ? 0.0 : -1000.0;
  }
}

GradientVector fd_grad(const LossFn& loss, const Policy& policy, double h,
                       std::optional<std::span<const std::size_t>> coords) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_grad: h must be > 0");
  GradientVector g(policy.num_params());
  Policy work = policy;
  auto at = [&](std::size_t i, double theta) {
    work.params()[i] = theta;
    const double v = loss(work);
    if (!std::isfinite(v)) {
      throw std::domain_error("fd_grad: non-finite loss at perturbed point " + std::to_string(i));
    }
    return v;
  };
  auto component = [&](std::size_t i) {
    const double theta = work.params()[i];
    const double f1 = at(i, theta + h) - at(i, theta - h);
    const double f2 = at(i, theta + 2.0 * h) - at(i, theta - 2.0 * h);
    work.params()[i] = theta;
    g[i] = (8.0 * f1 - f2) / (12.0 * h);
  };
  if (coords) {
    for (std::size_t i : *coords) component(i);
  } else {
    for (std::size_t i = 0; i < policy.num_params(); ++i) component(i);
  }
  return g;
}

GradientComparison compare_gradients(const GradientVector& analytic, const GradientVector& numeric,
                                     double magnitude_floor,
                                     std::optional<std::span<const std::size_t>> coords) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("gradient size mismatch");
  GradientComparison c;
  auto one = [&](std::size_t i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    c.max_abs_err = std::max(c.max_abs_err, err);
    if (std::abs(analytic[i]) > magnitude_floor) {
      c.max_rel_err = std::max(c.max_rel_err, err / std::abs(analytic[i]));
    } else {
      c.max_small_abs_err = std::max(c.max_small_abs_err, err);
    }
    ++c.components_checked;
  };
  if (coords) {
    for (std::size_t i : *coords) one(i);
  } else {
    for (std::size_t i = 0; i < analytic.size(); ++i) one(i);
  }
  return c;
}

}  // namespace itrolab::oracle
