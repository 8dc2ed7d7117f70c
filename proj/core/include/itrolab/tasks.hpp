#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itrolab/rng.hpp"

namespace itrolab {

using Token = int;
using Sequence = std::vector<Token>;

enum class TokenRole { digit, op, eq, ans, sep, eos };

// Dense token alphabet for a base-B task family.
//
// Ids are laid out so that the tokens a policy may emit come first:
//   0 .. B-1   digits
//   B          EOS
//   B+1        PLUS (operator)
//   B+2        EQ
//   B+3        ANS
//   B+4        SEP
class Vocabulary {
 public:
  explicit Vocabulary(int base);

  int base() const { return base_; }
  int size() const { return base_ + 5; }
  // Number of tokens a rationale may contain (digits and EOS).
  int output_size() const { return base_ + 1; }

  Token digit(int value) const;
  Token eos() const { return base_; }
  Token plus() const { return base_ + 1; }
  Token eq() const { return base_ + 2; }
  Token ans() const { return base_ + 3; }
  Token sep() const { return base_ + 4; }

  bool contains(Token t) const { return t >= 0 && t < size(); }
  TokenRole role(Token t) const;
  bool is_digit(Token t) const { return t >= 0 && t < base_; }
  int digit_value(Token t) const;

  std::string name(Token t) const;
  std::string render(std::span<const Token> seq) const;

 private:
  int base_;
};

enum class TaskFamily { sum_chain };

struct TaskFamilySpec {
  TaskFamily family = TaskFamily::sum_chain;
  int base = 3;
  int chain_length = 2;
  int max_rationale_len = 4;

  // Throws std::invalid_argument naming the violated bound.
  void validate() const;
  Vocabulary vocab() const { return Vocabulary(base); }
};

std::string to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& s);

struct TaskInstance {
  Sequence query;   // d1 PLUS d2 ... PLUS dL EQ
  Token answer;     // digit token
  std::optional<Sequence> golden;
  std::vector<int> digits;
};

// Builds the sum_chain instance for explicit digits.
TaskInstance make_instance(const TaskFamilySpec& spec, std::span<const int> digits);

TaskInstance sample_instance(const TaskFamilySpec& spec, Rng& rng);

// Instances are never persisted; they are regenerated from (seed, index).
TaskInstance instance_at(const TaskFamilySpec& spec, std::uint64_t seed, std::uint64_t index);

// Last digit strictly before the first EOS. Undefined when there is no EOS
// within max_len tokens or no digit precedes it.
std::optional<Token> answer_of(std::span<const Token> z, const Vocabulary& vocab,
                               std::size_t max_len = static_cast<std::size_t>(-1));

}  // namespace itrolab
