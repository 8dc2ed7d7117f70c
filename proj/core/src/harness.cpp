#include "itrolab/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "itrolab/checkpoint.hpp"
#include "itrolab/itro.hpp"
#include "itrolab/oracle.hpp"
#include "json.hpp"

#ifndef ITROLAB_VERSION
#define ITROLAB_VERSION "0.0.0"
#endif

namespace itrolab {
namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kOracleStream = 11;

void put_finite(ojson& j, const char* key, double v) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite metric '") + key + "'");
  j[key] = v;
}

}  // namespace

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return config.output_dir;
}

std::string version_string() { return ITROLAB_VERSION; }

std::string metrics_record_json(const MetricsRecord& r, bool with_wall_time) {
  ojson j;
  j["format_version"] = kRecordFormatVersion;
  j["step"] = r.step;
  j["method"] = r.method;
  put_finite(j, "objective_value", r.objective_value);
  put_finite(j, "mean_reward", r.mean_reward);
  put_finite(j, "valid_fraction", r.valid_fraction);
  put_finite(j, "mean_rationale_len", r.mean_rationale_len);
  if (r.accuracy) put_finite(j, "accuracy", *r.accuracy);
  if (r.mean_correct_len) put_finite(j, "mean_correct_len", *r.mean_correct_len);
  if (r.mean_w) put_finite(j, "mean_w", *r.mean_w);
  if (r.clip_fraction) put_finite(j, "clip_fraction", *r.clip_fraction);
  if (r.kl_penalty) put_finite(j, "kl_penalty", *r.kl_penalty);
  if (r.candidate_entropy_bits) put_finite(j, "candidate_entropy_bits", *r.candidate_entropy_bits);
  j["contributing_queries"] = r.contributing_queries;
  j["skipped"] = r.skipped;
  if (with_wall_time) j["wall_ms"] = r.wall_ms;
  return j.dump();
}

std::string manifest_json(const RunConfig& config, const std::filesystem::path& output_dir) {
  ojson j;
  j["format_version"] = kRecordFormatVersion;
  j["tool"] = "itrolab";
  j["code_version"] = version_string();
  j["seed"] = config.seed;
  j["method"] = to_string(config.method);
  j["output_dir"] = output_dir.string();
  ojson cfg = ojson::object();
  std::istringstream lines(to_config_text(config));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = cfg;
  j["llm_scale_reference"] = {{"batch_size", kLlmScaleBatchSize},
                              {"learning_rate", kLlmScaleLearningRate}};
  j["files"] = {{"metrics", "metrics.jsonl"},
                {"checkpoint_pattern", "checkpoint_<step>.txt"},
                {"final_checkpoint", "checkpoint_final.txt"}};
  j["checkpoint_format_version"] = kCheckpointFormatVersion;
  j["metrics_format_version"] = kRecordFormatVersion;
  return j.dump(2) + "\n";
}

int run(const RunConfig& config, std::ostream& log, TrainingReport* report_out) {
  namespace fs = std::filesystem;
  const fs::path dir = resolve_output_dir(config);
  try {
    fs::create_directories(dir);
    {
      std::ofstream manifest(dir / "manifest.json", std::ios::trunc);
      if (!manifest) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
      manifest << manifest_json(config, dir);
    }
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics in '" + dir.string() + "'");

    std::optional<Policy> reference;
    if (!config.reference_checkpoint.empty()) {
      reference = load_checkpoint(config.reference_checkpoint,
                                  PolicyShape{config.arch, config.task, config.context_window});
    }
    TrainHooks hooks;
    hooks.on_record = [&](const MetricsRecord& rec) {
      metrics << metrics_record_json(rec, config.record_wall_time) << '\n';
      metrics.flush();
    };
    hooks.on_checkpoint = [&](int step, const Policy& policy, bool final) {
      save_checkpoint(policy, dir / ("checkpoint_" + std::to_string(step) + ".txt"));
      if (final) save_checkpoint(policy, dir / "checkpoint_final.txt");
    };
    TrainingReport report = train(config, hooks, reference ? &*reference : nullptr);
    log << "run complete: method=" << to_string(config.method) << " steps=" << config.steps
        << " initial_accuracy=" << report.initial_accuracy << " final_accuracy=" << report.final_accuracy
        << " skipped_steps=" << report.skipped_steps << " output_dir=" << dir.string() << '\n';
    if (report_out) *report_out = std::move(report);
    return 0;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
}

std::string identity_json(const IdentityResult& r) {
  ojson j;
  j["format_version"] = kRecordFormatVersion;
  j["identity_name"] = r.identity_name;
  j["instances_tested"] = r.instances_tested;
  j["max_abs_err"] = r.max_abs_err;
  if (r.relative) j["max_rel_err"] = r.max_rel_err;
  j["tolerance"] = r.tolerance;
  j["tolerance_kind"] = r.relative ? "relative" : "absolute";
  j["pass"] = r.pass;
  return j.dump();
}

std::vector<IdentityResult> oracle_check(const RunConfig& config) {
  const int t_max = config.task.max_rationale_len;
  IdentityResult prop1{"proposition1_mll_equals_posterior_grad", 0, 0, 0, 1e-10, false, true};
  IdentityResult mass{"enumeration_mass_conservation", 0, 0, 0, 1e-9, false, true};
  IdentityResult bayes{"bayes_consistency", 0, 0, 0, 1e-12, false, true};
  IdentityResult mll_fd{"mll_grad_vs_finite_differences", 0, 0, 0, 1e-5, true, true};
  IdentityResult lp_fd{"grad_logprob_vs_finite_differences", 0, 0, 0, 1e-5, true, true};
  IdentityResult factor{"importance_weight_factorization", 0, 0, 0, 1e-9, false, true};
  IdentityResult kl_nonneg{"kl_nonnegative", 0, 0, 0, 0.0, false, true};
  IdentityResult kl_zero{"kl_zero_on_equal_distributions", 0, 0, 0, 0.0, false, true};
  const double fd_floor = 1e-6;
  const double fd_small_abs = 1e-10;

  for (int i = 0; i < config.oracle.pairs; ++i) {
    Rng rng = Rng::derive(config.seed, {kOracleStream, static_cast<std::uint64_t>(i)});
    const Policy policy = init_policy(config.arch, config.task,
                                      PolicyInit{InitKind::seeded_noise, config.oracle.init_sigma}, rng,
                                      config.context_window);
    const TaskInstance inst = sample_instance(config.task, rng);
    const Context fwd = forward_context(inst);
    const Context cond = conditioned_context(inst, policy.vocab());

    for (const Context& ctx : {fwd, cond}) {
      const double err = std::abs(oracle::enumerate(policy, ctx, t_max).total_mass() - 1.0);
      mass.max_abs_err = std::max(mass.max_abs_err, err);
    }
    ++mass.instances_tested;

    // grad log pi(z|x) against central differences on a sampled rationale.
    const Sequence z = sample_sequence(policy, fwd, 1.0, t_max, rng);
    {
      const auto analytic = grad_logprob(policy, fwd, z);
      const auto numeric = oracle::fd_grad(
          [&](const Policy& p) { return logprob(p, fwd, z); }, policy, config.oracle.fd_h);
      const auto cmp = oracle::compare_gradients(analytic, numeric, fd_floor);
      lp_fd.max_abs_err = std::max(lp_fd.max_abs_err, cmp.max_abs_err);
      lp_fd.max_rel_err = std::max(lp_fd.max_rel_err, cmp.max_rel_err);
      if (cmp.max_small_abs_err > fd_small_abs) lp_fd.pass = false;
      ++lp_fd.instances_tested;
    }

    {
      const double seq = itro::sequence_log_weight(policy, inst, z);
      double sum = 0.0;
      for (double lw : itro::token_log_weights(policy, inst, z)) sum += lw;
      factor.max_abs_err = std::max(factor.max_abs_err, std::abs(seq - sum));
      ++factor.instances_tested;
    }

    if (oracle::marginal(policy, inst, t_max) > 0.0) {
      const auto mll = oracle::mll_grad_exact(policy, inst, t_max);
      const auto post = oracle::posterior_grad_expect(policy, inst, t_max);
      prop1.max_abs_err = std::max(prop1.max_abs_err, (mll - post).inf_norm());
      ++prop1.instances_tested;

      const double m = oracle::marginal(policy, inst, t_max);
      for (const auto& [seq, w] : oracle::true_posterior(policy, inst, t_max)) {
        bayes.max_abs_err = std::max(bayes.max_abs_err, std::abs(w * m - std::exp(logprob(policy, fwd, seq))));
      }
      ++bayes.instances_tested;

      std::vector<std::size_t> coords;
      if (policy.arch() == Arch::tabular) {
        const auto [b, e] = policy.tabular_context_range(fwd);
        for (std::size_t c = b; c < e; ++c) coords.push_back(c);
        // A sample of parameters owned by other contexts, which must not move the marginal.
        Rng pick = Rng::derive(config.seed, {kOracleStream, static_cast<std::uint64_t>(i), 1});
        for (int k = 0; k < 32; ++k) {
          const std::size_t c = static_cast<std::size_t>(pick.next_u64() % policy.num_params());
          if (c < b || c >= e) coords.push_back(c);
        }
      } else {
        for (std::size_t c = 0; c < policy.num_params(); ++c) coords.push_back(c);
      }
      const auto numeric = oracle::fd_grad(
          [&](const Policy& p) { return oracle::log_marginal(p, inst, t_max); }, policy, config.oracle.fd_h,
          std::span<const std::size_t>(coords));
      const auto cmp = oracle::compare_gradients(mll, numeric, fd_floor, std::span<const std::size_t>(coords));
      mll_fd.max_abs_err = std::max(mll_fd.max_abs_err, cmp.max_abs_err);
      mll_fd.max_rel_err = std::max(mll_fd.max_rel_err, cmp.max_rel_err);
      if (cmp.max_small_abs_err > fd_small_abs) mll_fd.pass = false;
      ++mll_fd.instances_tested;

      const auto kl = oracle::kl_true_vs_estimated(policy, inst, t_max);
      if (!std::isfinite(kl.kl) || kl.kl < 0.0) kl_nonneg.pass = false;
      ++kl_nonneg.instances_tested;

      if (policy.arch() == Arch::tabular && inst.golden) {
        Policy point = policy;
        oracle::concentrate_on(point, fwd, *inst.golden);
        tie_conditioned_to_forward(point);
        const auto kl0 = oracle::kl_true_vs_estimated(point, inst, t_max);
        kl_zero.max_abs_err = std::max(kl_zero.max_abs_err, kl0.kl);
        ++kl_zero.instances_tested;
      }
    }
  }

  for (IdentityResult* r : {&prop1, &mass, &bayes, &factor, &kl_zero}) r->pass = r->max_abs_err <= r->tolerance;
  mll_fd.pass = mll_fd.pass && mll_fd.max_rel_err <= mll_fd.tolerance;
  lp_fd.pass = lp_fd.pass && lp_fd.max_rel_err <= lp_fd.tolerance;
  return {prop1, mass, bayes, mll_fd, lp_fd, factor, kl_nonneg, kl_zero};
}

EvalSummary evaluate_policy(const Policy& policy, const RunConfig& config) {
  const std::vector<TaskInstance> instances = eval_instances(config);
  EvalSummary s;
  s.accuracy = greedy_or_sampled_accuracy(policy, config, instances, 0xe7a1ULL);
  Rng rng = Rng::derive(config.seed, {0xe7a2ULL});
  s.mean_length = metrics::mean_rationale_length(policy, instances, config.eval.decode.k,
                                                 config.itro.temperature, rng);
  s.n_instances = static_cast<int>(instances.size());
  s.decode_mode = config.eval.decode.describe();
  return s;
}

std::string eval_summary_json(const EvalSummary& s) {
  ojson j;
  j["format_version"] = kRecordFormatVersion;
  j["accuracy"] = s.accuracy;
  j["mean_length"] = s.mean_length;
  j["n_instances"] = s.n_instances;
  j["decode_mode"] = s.decode_mode;
  return j.dump();
}

std::vector<std::string> inspect_records(const Policy& policy, std::uint64_t query_seed, double w_max) {
  Rng rng(query_seed);
  const TaskInstance inst = sample_instance(policy.task(), rng);
  const Sequence z = greedy_sequence(policy, forward_context(inst), policy.task().max_rationale_len);
  std::vector<std::string> out;
  for (const metrics::TokenAnnotation& a : metrics::annotate(policy, inst, z, w_max)) {
    ojson j;
    j["format_version"] = kRecordFormatVersion;
    j["query"] = policy.vocab().render(inst.query);
    j["answer"] = policy.vocab().name(inst.answer);
    j["rationale"] = policy.vocab().render(z);
    j["position"] = a.position;
    j["token"] = a.token;
    j["token_name"] = policy.vocab().name(a.token);
    j["forward_prob"] = a.forward_prob;
    j["conditioned_prob"] = a.conditioned_prob;
    j["w"] = a.w;
    j["entropy_bits"] = a.entropy_bits;
    out.push_back(j.dump());
  }
  return out;
}

std::vector<int> parse_grid(const std::string& spec) {
  std::string body = spec;
  if (body.rfind("n=", 0) == 0) body = body.substr(2);
  else throw std::invalid_argument("grid must look like n=1,2,5");
  std::vector<int> values;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("grid value '" + item + "' is not an integer");
    }
    if (used != item.size()) throw std::invalid_argument("grid value '" + item + "' is not an integer");
    if (v < 1) throw std::invalid_argument("itro.n must be ≥ 1");
    values.push_back(v);
  }
  if (values.empty()) throw std::invalid_argument("empty grid");
  return values;
}

std::string sweep_point_json(const SweepPoint& p) {
  ojson j;
  j["format_version"] = kRecordFormatVersion;
  j["n"] = p.n;
  j["initial_accuracy"] = p.initial_accuracy;
  j["final_accuracy"] = p.final_accuracy;
  j["final_correct_len"] = p.final_correct_len;
  j["exit_status"] = p.exit_status;
  return j.dump();
}

std::vector<SweepPoint> sweep(const RunConfig& config, std::span<const int> n_values, std::ostream& log) {
  const std::filesystem::path base = resolve_output_dir(config);
  std::filesystem::create_directories(base);
  std::ofstream summary(base / "sweep.jsonl", std::ios::trunc);
  std::vector<SweepPoint> points;
  for (int n : n_values) {
    RunConfig c = config;
    c.method = Method::itro;
    c.itro.n = n;
    c.output_dir = (base / ("n_" + std::to_string(n))).string();
    TrainingReport report{{}, initial_policy(c), 0, 0, 0, 0, 0};
    SweepPoint p;
    p.n = n;
    // Children must not pick up the environment override again.
    const char* env = std::getenv(kOutputDirEnv);
    const std::string saved = env ? env : "";
    if (env) ::unsetenv(kOutputDirEnv);
    p.exit_status = run(c, log, &report);
    if (env) ::setenv(kOutputDirEnv, saved.c_str(), 1);
    p.initial_accuracy = report.initial_accuracy;
    p.final_accuracy = report.final_accuracy;
    p.final_correct_len = report.final_correct_len;
    summary << sweep_point_json(p) << '\n';
    summary.flush();
    points.push_back(p);
  }
  return points;
}

}  // namespace itrolab
