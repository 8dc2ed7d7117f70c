#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "itrolab/baselines.hpp"
#include "itrolab/itro.hpp"
#include "itrolab/metrics.hpp"
#include "itrolab/policy.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab {

enum class Method { itro, sft, latro, raftpp, gpg, grpo };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct EvalConfig {
  metrics::Decode decode;
  int instances = 64;
};

struct OracleConfig {
  int pairs = 50;
  double fd_h = 1e-3;
  double init_sigma = 1.0;
};

inline constexpr int kConfigFormatVersion = 1;

// LLM-scale settings the toy defaults deliberately replace; recorded in the
// manifest next to the values actually used.
inline constexpr int kLlmScaleBatchSize = 128;
inline constexpr double kLlmScaleLearningRate = 5e-7;

struct RunConfig {
  Method method = Method::itro;
  TaskFamilySpec task;
  Arch arch = Arch::tabular;
  PolicyInit init{InitKind::seeded_noise, 0.01};
  int context_window = 3;
  itro::ItroConfig itro;
  baselines::BaselineConfig baseline;
  std::string reference_checkpoint;  // empty: the initial policy
  int steps = 2000;
  int batch_size = 32;
  int eval_every = 100;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  int workers = 1;
  bool record_wall_time = false;
  EvalConfig eval;
  OracleConfig oracle;

  double learning_rate() const { return itro.learning_rate; }
  int group_size() const { return itro.G; }
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, std::string key, const std::string& message);
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

// Line-oriented `key = value` grammar with dotted section keys; `#` starts a
// comment. Unknown keys, duplicates, type mismatches and invariant
// violations throw ConfigError naming the key and line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical text with every key explicit; parse_config(to_config_text(c))
// reproduces c.
std::string to_config_text(const RunConfig& config);

}  // namespace itrolab
