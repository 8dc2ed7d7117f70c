#include "itrolab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace itrolab {
namespace {

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// Number of digit strings with length in [0, max_len].
std::size_t strings_up_to(std::size_t base, int max_len) {
  std::size_t total = 0;
  for (int k = 0; k <= max_len; ++k) total += ipow(base, k);
  return total;
}

[[noreturn]] void unaddressable(const std::string& why) {
  throw std::out_of_range("unaddressable policy state: " + why);
}

}  // namespace

std::string to_string(Arch a) { return a == Arch::tabular ? "tabular" : "linear"; }

Arch arch_from_string(const std::string& s) {
  if (s == "tabular") return Arch::tabular;
  if (s == "linear") return Arch::linear;
  throw std::invalid_argument("unknown policy arch '" + s + "'");
}

Context forward_context(const TaskInstance& inst) { return Context{inst.query, false}; }

Context conditioned_context(const TaskInstance& inst, const Vocabulary& vocab) {
  Context ctx{inst.query, true};
  ctx.prefix.push_back(vocab.ans());
  ctx.prefix.push_back(inst.answer);
  ctx.prefix.push_back(vocab.sep());
  return ctx;
}

double Distribution::entropy_bits() const {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h > 0.0 ? h : 0.0;
}

GradientVector& GradientVector::operator+=(const GradientVector& other) {
  if (other.size() != size()) throw std::invalid_argument("gradient size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

GradientVector& GradientVector::operator-=(const GradientVector& other) {
  if (other.size() != size()) throw std::invalid_argument("gradient size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= other.values[i];
  return *this;
}

GradientVector& GradientVector::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}

void GradientVector::axpy(double a, const GradientVector& x) {
  if (x.size() != size()) throw std::invalid_argument("gradient size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += a * x.values[i];
}

double GradientVector::inf_norm() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double GradientVector::l2_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool GradientVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

GradientVector operator-(GradientVector a, const GradientVector& b) {
  a -= b;
  return a;
}

Policy::Policy(Arch arch, const TaskFamilySpec& spec, int window)
    : arch_(arch), spec_(spec), vocab_(spec.base), window_(window) {}

Policy Policy::tabular(const TaskFamilySpec& spec) {
  spec.validate();
  Policy p(Arch::tabular, spec, 0);
  const std::size_t b = static_cast<std::size_t>(spec.base);
  p.forward_contexts_ = ipow(b, spec.chain_length);
  p.generation_prefixes_ = strings_up_to(b, spec.max_rationale_len - 1);
  p.prefixes_per_context_ = p.generation_prefixes_ + strings_up_to(b, spec.max_rationale_len);
  p.params_.assign(p.tabular_num_states() * static_cast<std::size_t>(p.vocab_size()), 0.0);
  return p;
}

Policy Policy::linear(const TaskFamilySpec& spec, int context_window) {
  spec.validate();
  if (context_window < 1) throw std::invalid_argument("policy.context_window must be ≥ 1");
  Policy p(Arch::linear, spec, context_window);
  const std::size_t v = static_cast<std::size_t>(p.vocab_size());
  const std::size_t features = static_cast<std::size_t>(p.vocab_.size()) + 1;  // + PAD
  p.params_.assign(v + static_cast<std::size_t>(context_window) * features * v, 0.0);
  return p;
}

void Policy::set_params(std::vector<double> params) {
  if (params.size() != params_.size()) {
    throw std::invalid_argument("dimension mismatch: expected " + std::to_string(params_.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  params_ = std::move(params);
}

std::size_t Policy::tabular_num_states() const {
  if (arch_ != Arch::tabular) throw std::logic_error("tabular_num_states on a non-tabular policy");
  return forward_contexts_ * static_cast<std::size_t>(1 + spec_.base) * prefixes_per_context_;
}

std::pair<std::size_t, std::size_t> Policy::tabular_context_range(const Context& ctx) const {
  if (arch_ != Arch::tabular) throw std::logic_error("tabular_context_range on a non-tabular policy");
  const std::size_t block = prefixes_per_context_ * static_cast<std::size_t>(vocab_size());
  const std::size_t begin = tabular_context_index(ctx) * block;
  return {begin, begin + block};
}

std::size_t Policy::tabular_context_index(const Context& ctx) const {
  const std::size_t query_len = static_cast<std::size_t>(2 * spec_.chain_length);
  const std::size_t expected = query_len + (ctx.conditioned ? 3 : 0);
  if (ctx.prefix.size() != expected) unaddressable("context length");
  std::size_t index = 0;
  for (int i = 0; i < spec_.chain_length; ++i) {
    const Token d = ctx.prefix[2 * i];
    if (!vocab_.is_digit(d)) unaddressable("expected digit in query");
    const Token next = ctx.prefix[2 * i + 1];
    const Token want = (i + 1 == spec_.chain_length) ? vocab_.eq() : vocab_.plus();
    if (next != want) unaddressable("malformed query");
    index = index * static_cast<std::size_t>(spec_.base) + static_cast<std::size_t>(d);
  }
  if (!ctx.conditioned) return index;
  const Token a = ctx.prefix[query_len];
  const Token y = ctx.prefix[query_len + 1];
  const Token s = ctx.prefix[query_len + 2];
  if (a != vocab_.ans() || !vocab_.is_digit(y) || s != vocab_.sep()) {
    unaddressable("malformed answer-conditioned suffix");
  }
  return forward_contexts_ + index * static_cast<std::size_t>(spec_.base) + static_cast<std::size_t>(y);
}

std::size_t Policy::tabular_prefix_index(std::span<const Token> z_prefix) const {
  const std::size_t b = static_cast<std::size_t>(spec_.base);
  std::span<const Token> body = z_prefix;
  bool readout = false;
  if (!z_prefix.empty() && z_prefix.back() == vocab_.ans()) {
    readout = true;
    body = z_prefix.first(z_prefix.size() - 1);
  }
  const int limit = readout ? spec_.max_rationale_len : spec_.max_rationale_len - 1;
  if (static_cast<int>(body.size()) > limit) unaddressable("prefix longer than state space");
  std::size_t offset = 0;
  for (std::size_t k = 0; k < body.size(); ++k) offset += ipow(b, static_cast<int>(k));
  std::size_t code = 0;
  for (Token t : body) {
    if (!vocab_.is_digit(t)) unaddressable("non-digit token inside rationale prefix");
    code = code * b + static_cast<std::size_t>(t);
  }
  return (readout ? generation_prefixes_ : 0) + offset + code;
}

std::size_t Policy::tabular_offset(const Context& ctx, std::span<const Token> z_prefix) const {
  const std::size_t state =
      tabular_context_index(ctx) * prefixes_per_context_ + tabular_prefix_index(z_prefix);
  return state * static_cast<std::size_t>(vocab_size());
}

std::span<double> Policy::tabular_state(const Context& ctx, std::span<const Token> z_prefix) {
  if (arch_ != Arch::tabular) throw std::logic_error("tabular_state on a non-tabular policy");
  return std::span<double>(params_).subspan(tabular_offset(ctx, z_prefix),
                                            static_cast<std::size_t>(vocab_size()));
}

std::span<const double> Policy::tabular_state(const Context& ctx,
                                              std::span<const Token> z_prefix) const {
  if (arch_ != Arch::tabular) throw std::logic_error("tabular_state on a non-tabular policy");
  return std::span<const double>(params_).subspan(tabular_offset(ctx, z_prefix),
                                                  static_cast<std::size_t>(vocab_size()));
}

Token Policy::linear_feature(const Context& ctx, std::span<const Token> z_prefix, int slot) const {
  // slot 0 is the oldest position in the window.
  const long total = static_cast<long>(ctx.prefix.size() + z_prefix.size());
  const long pos = total - window_ + slot;
  if (pos < 0) return vocab_.size();  // PAD
  const Token t = pos < static_cast<long>(ctx.prefix.size())
                      ? ctx.prefix[static_cast<std::size_t>(pos)]
                      : z_prefix[static_cast<std::size_t>(pos) - ctx.prefix.size()];
  if (!vocab_.contains(t)) unaddressable("token outside vocabulary");
  return t;
}

void Policy::logits(const Context& ctx, std::span<const Token> z_prefix, std::span<double> out) const {
  const std::size_t v = static_cast<std::size_t>(vocab_size());
  if (out.size() != v) throw std::invalid_argument("logits buffer size mismatch");
  if (arch_ == Arch::tabular) {
    const std::size_t off = tabular_offset(ctx, z_prefix);
    std::copy_n(params_.begin() + static_cast<long>(off), v, out.begin());
    return;
  }
  std::copy_n(params_.begin(), v, out.begin());
  const std::size_t features = static_cast<std::size_t>(vocab_.size()) + 1;
  for (int slot = 0; slot < window_; ++slot) {
    const std::size_t f = static_cast<std::size_t>(linear_feature(ctx, z_prefix, slot));
    const std::size_t row = v + (static_cast<std::size_t>(slot) * features + f) * v;
    for (std::size_t a = 0; a < v; ++a) out[a] += params_[row + a];
  }
}

void Policy::add_logit_grad(const Context& ctx, std::span<const Token> z_prefix,
                            std::span<const double> dlogits, double scale,
                            GradientVector& grad) const {
  const std::size_t v = static_cast<std::size_t>(vocab_size());
  if (dlogits.size() != v) throw std::invalid_argument("logit gradient size mismatch");
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient size mismatch");
  if (arch_ == Arch::tabular) {
    const std::size_t off = tabular_offset(ctx, z_prefix);
    for (std::size_t a = 0; a < v; ++a) grad[off + a] += scale * dlogits[a];
    return;
  }
  for (std::size_t a = 0; a < v; ++a) grad[a] += scale * dlogits[a];
  const std::size_t features = static_cast<std::size_t>(vocab_.size()) + 1;
  for (int slot = 0; slot < window_; ++slot) {
    const std::size_t f = static_cast<std::size_t>(linear_feature(ctx, z_prefix, slot));
    const std::size_t row = v + (static_cast<std::size_t>(slot) * features + f) * v;
    for (std::size_t a = 0; a < v; ++a) grad[row + a] += scale * dlogits[a];
  }
}

Policy init_policy(Arch arch, const TaskFamilySpec& spec, PolicyInit init, Rng& rng,
                   int context_window) {
  if (init.sigma < 0.0) throw std::invalid_argument("policy.init_sigma must be ≥ 0");
  Policy p = arch == Arch::tabular ? Policy::tabular(spec) : Policy::linear(spec, context_window);
  if (init.kind == InitKind::seeded_noise) {
    for (double& theta : p.params()) theta = init.sigma * rng.normal();
  }
  return p;
}

void tie_conditioned_to_forward(Policy& policy) {
  if (policy.arch() != Arch::tabular) throw std::logic_error("tie_conditioned_to_forward needs a tabular policy");
  const TaskFamilySpec& spec = policy.task();
  const Vocabulary& vocab = policy.vocab();
  std::vector<int> digits(spec.chain_length, 0);
  std::vector<Sequence> prefixes;
  Sequence cur;
  auto walk = [&](auto&& self, int limit) -> void {
    prefixes.push_back(cur);
    if (static_cast<int>(cur.size()) == limit) return;
    for (int d = 0; d < spec.base; ++d) {
      cur.push_back(d);
      self(self, limit);
      cur.pop_back();
    }
  };
  walk(walk, spec.max_rationale_len);
  while (true) {
    const TaskInstance inst = make_instance(spec, digits);
    const Context fwd = forward_context(inst);
    for (int y = 0; y < spec.base; ++y) {
      Context cond = fwd;
      cond.conditioned = true;
      cond.prefix.push_back(vocab.ans());
      cond.prefix.push_back(y);
      cond.prefix.push_back(vocab.sep());
      for (const Sequence& pre : prefixes) {
        if (static_cast<int>(pre.size()) < spec.max_rationale_len) {
          auto src = policy.tabular_state(fwd, pre);
          std::vector<double> copy(src.begin(), src.end());
          std::copy(copy.begin(), copy.end(), policy.tabular_state(cond, pre).begin());
        }
        Sequence readout = pre;
        readout.push_back(vocab.ans());
        auto src = policy.tabular_state(fwd, readout);
        std::vector<double> copy(src.begin(), src.end());
        std::copy(copy.begin(), copy.end(), policy.tabular_state(cond, readout).begin());
      }
    }
    int i = spec.chain_length - 1;
    while (i >= 0 && ++digits[i] == spec.base) digits[i--] = 0;
    if (i < 0) break;
  }
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

Distribution next_dist(const Policy& policy, const Context& ctx, std::span<const Token> z_prefix) {
  std::vector<double> l(static_cast<std::size_t>(policy.vocab_size()));
  policy.logits(ctx, z_prefix, l);
  return Distribution{softmax(l)};
}

namespace {

double log_softmax_at(std::span<const double> logits, Token token) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  return logits[static_cast<std::size_t>(token)] - mx - std::log(sum);
}

void check_output_token(const Policy& policy, Token t) {
  if (t < 0 || t >= policy.vocab_size()) {
    throw std::out_of_range("token " + std::to_string(t) + " is not emittable by the policy");
  }
}

}  // namespace

double logprob(const Policy& policy, const Context& ctx, std::span<const Token> z) {
  if (z.empty()) throw std::invalid_argument("logprob of an empty sequence");
  std::vector<double> l(static_cast<std::size_t>(policy.vocab_size()));
  double total = 0.0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    check_output_token(policy, z[t]);
    policy.logits(ctx, z.first(t), l);
    total += log_softmax_at(l, z[t]);
  }
  return total;
}

GradientVector grad_logprob(const Policy& policy, const Context& ctx, std::span<const Token> z) {
  if (z.empty()) throw std::invalid_argument("grad_logprob of an empty sequence");
  GradientVector grad(policy.num_params());
  for (std::size_t t = 0; t < z.size(); ++t) {
    check_output_token(policy, z[t]);
    Distribution d = next_dist(policy, ctx, z.first(t));
    for (double& p : d.probs) p = -p;
    d.probs[static_cast<std::size_t>(z[t])] += 1.0;
    policy.add_logit_grad(ctx, z.first(t), d.probs, 1.0, grad);
  }
  return grad;
}

Sequence sample_sequence(const Policy& policy, const Context& ctx, double temperature, int max_len,
                         Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  Sequence z;
  std::vector<double> l(static_cast<std::size_t>(policy.vocab_size()));
  const Token eos = policy.vocab().eos();
  while (static_cast<int>(z.size()) < max_len) {
    policy.logits(ctx, z, l);
    const std::vector<double> probs = softmax(l, temperature);
    z.push_back(rng.categorical(probs));
    if (z.back() == eos) break;
  }
  return z;
}

Sequence greedy_sequence(const Policy& policy, const Context& ctx, int max_len) {
  Sequence z;
  std::vector<double> l(static_cast<std::size_t>(policy.vocab_size()));
  const Token eos = policy.vocab().eos();
  while (static_cast<int>(z.size()) < max_len) {
    policy.logits(ctx, z, l);
    // max_element returns the first maximum, i.e. the lowest id.
    z.push_back(static_cast<Token>(std::max_element(l.begin(), l.end()) - l.begin()));
    if (z.back() == eos) break;
  }
  return z;
}

}  // namespace itrolab
