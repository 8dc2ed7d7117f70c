#include "itrolab/tasks.hpp"

#include <cmath>
#include <stdexcept>

namespace itrolab {

Vocabulary::Vocabulary(int base) : base_(base) {
  if (base < 2 || base > 10) throw std::invalid_argument("vocabulary base must be in [2, 10]");
}

Token Vocabulary::digit(int value) const {
  if (value < 0 || value >= base_) throw std::out_of_range("digit value outside base");
  return value;
}

TokenRole Vocabulary::role(Token t) const {
  if (!contains(t)) throw std::out_of_range("token id outside vocabulary");
  if (t < base_) return TokenRole::digit;
  switch (t - base_) {
    case 0: return TokenRole::eos;
    case 1: return TokenRole::op;
    case 2: return TokenRole::eq;
    case 3: return TokenRole::ans;
    default: return TokenRole::sep;
  }
}

int Vocabulary::digit_value(Token t) const {
  if (!is_digit(t)) throw std::invalid_argument("token is not a digit");
  return t;
}

std::string Vocabulary::name(Token t) const {
  switch (role(t)) {
    case TokenRole::digit: return std::to_string(t);
    case TokenRole::eos: return "EOS";
    case TokenRole::op: return "+";
    case TokenRole::eq: return "=";
    case TokenRole::ans: return "ANS";
    case TokenRole::sep: return "SEP";
  }
  return "?";
}

std::string Vocabulary::render(std::span<const Token> seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += name(seq[i]);
  }
  return out;
}

void TaskFamilySpec::validate() const {
  if (base < 2) throw std::invalid_argument("task.base must be ≥ 2");
  if (base > 10) throw std::invalid_argument("task.base must be ≤ 10");
  if (chain_length < 1) throw std::invalid_argument("task.chain_length must be ≥ 1");
  if (max_rationale_len < 2) throw std::invalid_argument("task.max_rationale_len must be ≥ 2");
  const double space = std::pow(static_cast<double>(base + 1), max_rationale_len);
  if (space > 1e7) {
    throw std::invalid_argument("task space too large to enumerate: (base+1)^max_rationale_len > 1e7");
  }
}

std::string to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::sum_chain: return "sum_chain";
  }
  return "?";
}

TaskFamily task_family_from_string(const std::string& s) {
  if (s == "sum_chain") return TaskFamily::sum_chain;
  throw std::invalid_argument("unknown task family '" + s + "'");
}

TaskInstance make_instance(const TaskFamilySpec& spec, std::span<const int> digits) {
  spec.validate();
  if (static_cast<int>(digits.size()) != spec.chain_length) {
    throw std::invalid_argument("digit count does not match chain_length");
  }
  const Vocabulary vocab = spec.vocab();
  TaskInstance inst;
  inst.digits.assign(digits.begin(), digits.end());
  Sequence golden;
  int partial = 0;
  for (int i = 0; i < spec.chain_length; ++i) {
    const int d = digits[i];
    if (d < 0 || d >= spec.base) throw std::invalid_argument("digit outside base");
    if (i > 0) inst.query.push_back(vocab.plus());
    inst.query.push_back(vocab.digit(d));
    partial = (partial + d) % spec.base;
    // Running sums s_2 .. s_{L-1}; the final sum is the answer itself.
    if (i >= 1 && i + 1 < spec.chain_length) golden.push_back(vocab.digit(partial));
  }
  inst.query.push_back(vocab.eq());
  inst.answer = vocab.digit(partial);
  golden.push_back(inst.answer);
  golden.push_back(vocab.eos());
  if (static_cast<int>(golden.size()) <= spec.max_rationale_len) inst.golden = std::move(golden);
  return inst;
}

TaskInstance sample_instance(const TaskFamilySpec& spec, Rng& rng) {
  std::vector<int> digits(spec.chain_length);
  for (int& d : digits) d = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(spec.base));
  return make_instance(spec, digits);
}

TaskInstance instance_at(const TaskFamilySpec& spec, std::uint64_t seed, std::uint64_t index) {
  Rng rng = Rng::derive(seed, {0x7461736bULL, index});
  return sample_instance(spec, rng);
}

std::optional<Token> answer_of(std::span<const Token> z, const Vocabulary& vocab,
                               std::size_t max_len) {
  std::optional<Token> last_digit;
  const std::size_t limit = std::min(z.size(), max_len);
  for (std::size_t i = 0; i < limit; ++i) {
    const Token t = z[i];
    if (t == vocab.eos()) return last_digit;
    if (vocab.is_digit(t)) last_digit = t;
  }
  return std::nullopt;
}

}  // namespace itrolab
