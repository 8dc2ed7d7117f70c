#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "itrolab/config.hpp"
#include "itrolab/metrics.hpp"
#include "itrolab/policy.hpp"
#include "itrolab/trainer.hpp"

namespace itrolab {

inline constexpr int kRecordFormatVersion = 1;
inline constexpr const char* kOutputDirEnv = "ITROLAB_OUTPUT_DIR";

// config.output_dir unless ITROLAB_OUTPUT_DIR is set.
std::filesystem::path resolve_output_dir(const RunConfig& config);

std::string version_string();

std::string metrics_record_json(const MetricsRecord& record, bool with_wall_time);
std::string manifest_json(const RunConfig& config, const std::filesystem::path& output_dir);

// Trains and writes manifest.json, metrics.jsonl (one line per step, flushed
// per line), checkpoint_<step>.txt at eval_every and checkpoint_final.txt.
// Returns 0 on success; diagnostics go to `log`.
int run(const RunConfig& config, std::ostream& log, TrainingReport* report = nullptr);

struct IdentityResult {
  std::string identity_name;
  int instances_tested = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool relative = false;
  bool pass = false;
};

std::string identity_json(const IdentityResult& r);

// Runs every enumeration identity over config.oracle.pairs seeded random
// (policy, instance) pairs.
std::vector<IdentityResult> oracle_check(const RunConfig& config);

struct EvalSummary {
  double accuracy = 0.0;
  double mean_length = 0.0;
  int n_instances = 0;
  std::string decode_mode;
};

EvalSummary evaluate_policy(const Policy& policy, const RunConfig& config);
std::string eval_summary_json(const EvalSummary& s);

// One JSON line per token of the greedy rationale for the instance drawn
// from query_seed.
std::vector<std::string> inspect_records(const Policy& policy, std::uint64_t query_seed, double w_max);

struct SweepPoint {
  int n = 0;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  double final_correct_len = 0.0;
  int exit_status = 0;
};

std::vector<int> parse_grid(const std::string& spec);
std::string sweep_point_json(const SweepPoint& p);

// One training run per n under <output_dir>/n_<n>/, plus sweep.jsonl.
std::vector<SweepPoint> sweep(const RunConfig& config, std::span<const int> n_values, std::ostream& log);

}  // namespace itrolab
