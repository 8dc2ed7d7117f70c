// One line per acceptance criterion: "PASS <n> <name>: <detail>" or FAIL.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "itrolab/baselines.hpp"
#include "itrolab/checkpoint.hpp"
#include "itrolab/config.hpp"
#include "itrolab/harness.hpp"
#include "itrolab/itro.hpp"
#include "itrolab/oracle.hpp"
#include "itrolab/trainer.hpp"
#include "reference.hpp"

using namespace itrolab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Values from the first oracle-verified seed-7 run, enforced as regressions.
constexpr double kPinnedItroFinalAccuracy = 1.0;
constexpr double kPinnedSftFinalAccuracy = 1.0;
constexpr double kPinnedGrpoFinalAccuracy = 1.0;
constexpr double kPinnedItroFinalCorrectLen = 2.2438578981483630;
constexpr double kPinnedLenTolerance = 1e-9;

const TaskFamilySpec kSpec{TaskFamily::sum_chain, 3, 2, 4};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Policy random_tabular(std::uint64_t seed, std::uint64_t i) {
  Rng rng = Rng::derive(seed, {i});
  return init_policy(Arch::tabular, kSpec, PolicyInit{InitKind::seeded_noise, 1.0}, rng);
}

RunConfig training_config(Method m) {
  RunConfig c = parse_config("seed = 7\nsteps = 2000");
  c.method = m;
  return c;
}

Outcome proposition_one() {
  Outcome o;
  double prop = 0.0, rel_mll = 0.0, rel_post = 0.0, small = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Policy p = random_tabular(1001, i);
    Rng rng = Rng::derive(1002, {i});
    const TaskInstance inst = sample_instance(kSpec, rng);
    const GradientVector mll = oracle::mll_grad_exact(p, inst, 4);
    const GradientVector post = oracle::posterior_grad_expect(p, inst, 4);
    prop = std::max(prop, (mll - post).inf_norm());
    // Every parameter outside the forward-context block is checked to be
    // exactly zero analytically; fd covers that block plus a random sample.
    const auto [b, e] = p.tabular_context_range(forward_context(inst));
    std::vector<std::size_t> coords;
    for (std::size_t c = b; c < e; ++c) coords.push_back(c);
    for (int k = 0; k < 16; ++k) {
      const std::size_t c = rng.next_u64() % p.num_params();
      if (c < b || c >= e) coords.push_back(c);
    }
    for (std::size_t c = 0; c < p.num_params(); ++c) {
      if ((c < b || c >= e) && (mll[c] != 0.0 || post[c] != 0.0)) o.pass = false;
    }
    const GradientVector fd = oracle::fd_grad([&](const Policy& q) { return oracle::log_marginal(q, inst, 4); },
                                              p, 1e-3, std::span<const std::size_t>(coords));
    const auto c1 = oracle::compare_gradients(mll, fd, 1e-6, std::span<const std::size_t>(coords));
    const auto c2 = oracle::compare_gradients(post, fd, 1e-6, std::span<const std::size_t>(coords));
    rel_mll = std::max(rel_mll, c1.max_rel_err);
    rel_post = std::max(rel_post, c2.max_rel_err);
    small = std::max({small, c1.max_small_abs_err, c2.max_small_abs_err});
  }
  o.pass = o.pass && prop <= 1e-10 && rel_mll <= 1e-5 && rel_post <= 1e-5 && small <= 1e-10;
  o.detail = fmt("50 policies, |mll-post|_inf=%.3g, fd rel err mll=%.3g post=%.3g, fd abs err on tiny comps=%.3g",
                 prop, rel_mll, rel_post, small);
  return o;
}

Outcome factorization() {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Policy p = random_tabular(2001, i);
    Rng rng = Rng::derive(2002, {i});
    const TaskInstance inst = sample_instance(kSpec, rng);
    const Sequence z = sample_sequence(p, forward_context(inst), 1.0, 4, rng);
    double sum = 0.0;
    for (double lw : itro::token_log_weights(p, inst, z)) sum += lw;
    // token weights recomputed from raw logits as an independent check
    double direct = 0.0;
    const Context fwd = forward_context(inst), cond = conditioned_context(inst, p.vocab());
    for (std::size_t t = 0; t < z.size(); ++t) {
      const auto pre = std::span<const Token>(z).first(t);
      const auto a = static_cast<std::size_t>(z[t]);
      direct += std::log(reference::next_probs(p, cond, pre)[a]) - std::log(reference::next_probs(p, fwd, pre)[a]);
    }
    const double seq = itro::sequence_log_weight(p, inst, z);
    worst = std::max({worst, std::abs(seq - sum), std::abs(seq - direct)});
  }
  return {worst <= 1e-9, fmt("100 pairs, max |log w_seq - sum log w_tok| = %.3g", worst)};
}

Outcome clipping() {
  const TaskFamilySpec toy{TaskFamily::sum_chain, 2, 1, 3};
  const std::vector<int> digits{1};
  const TaskInstance inst = make_instance(toy, digits);
  Policy p = Policy::tabular(toy);
  auto f = p.tabular_state(forward_context(inst), Sequence{});
  f[0] = std::log(0.002);
  f[1] = std::log(0.499);
  f[2] = std::log(0.499);
  auto c = p.tabular_state(conditioned_context(inst, p.vocab()), Sequence{});
  c[0] = std::log(0.7);
  c[1] = std::log(0.15);
  c[2] = std::log(0.15);
  const auto corr = itro::correction_factor(p, inst, Sequence{}, 0, 200.0);

  // The valid rationale [digit_0, digit_1, EOS] puts the clipped token at
  // the root as ground truth, so at least one candidate is clipped.
  const std::vector<Sequence> valid{Sequence{0, 1, 2}};
  itro::ItroConfig cfg;
  cfg.n = 50;
  cfg.max_rationale_len = 3;
  Rng rng(31), replay(31);
  const auto result = itro::itro_step_grad(p, inst, valid, cfg, rng);
  std::size_t count = 0, clipped = 0;
  bool recorded_200 = true;
  for (const Sequence& z : valid) {
    for (std::size_t t = 0; t < z.size(); ++t) {
      const auto step = itro::sample_candidates(p, inst, std::span<const Token>(z).first(t), z[t], cfg.n, 200.0, replay);
      for (const auto& cand : step.candidates) {
        ++count;
        const double raw = reference::next_probs(p, conditioned_context(inst, p.vocab()), std::span<const Token>(z).first(t))
                               [static_cast<std::size_t>(cand.token)] /
                           reference::next_probs(p, forward_context(inst), std::span<const Token>(z).first(t))
                               [static_cast<std::size_t>(cand.token)];
        if (raw > 200.0) {
          ++clipped;
          recorded_200 = recorded_200 && cand.w == 200.0;
        }
      }
    }
  }
  const double hand = static_cast<double>(clipped) / static_cast<double>(count);
  const bool pass = std::abs(corr.raw - 350.0) < 1e-9 && corr.w == 200.0 && recorded_200 && clipped > 0 &&
                    result.stats.clipped == clipped && result.stats.candidates == count &&
                    result.stats.clip_fraction == hand;
  return {pass, fmt("raw ratio %.12g -> w %.17g; clip_fraction %.6g vs hand count %.6g", corr.raw, corr.w,
                    result.stats.clip_fraction, hand)};
}

Outcome estimator_consistency() {
  const TaskFamilySpec toy{TaskFamily::sum_chain, 2, 1, 2};
  const std::vector<int> digits{1};
  const TaskInstance inst = make_instance(toy, digits);
  Rng init(41);
  const Policy p = init_policy(Arch::tabular, toy, PolicyInit{InitKind::seeded_noise, 1.0}, init);
  const std::vector<Sequence> valid{Sequence{1, 2}};
  itro::ItroConfig cfg;
  cfg.n = 5;
  const GradientVector exact = reference::expected_itro_grad(p, inst, valid, cfg.n, cfg.w_max);
  GradientVector mean(p.num_params());
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    Rng rng = Rng::derive(42, {static_cast<std::uint64_t>(i)});
    mean += itro::itro_step_grad(p, inst, valid, cfg, rng).grad;
  }
  mean *= 1.0 / draws;
  const double rel = (mean - exact).l2_norm() / exact.l2_norm();
  return {rel <= 0.05, fmt("10^5 resamples, relative l2 error %.4g (limit 0.05)", rel)};
}

Outcome degenerate_reductions() {
  double a_err = 0.0, b_err = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Policy p = random_tabular(5001, i);
    Rng rng = Rng::derive(5002, {i});
    const TaskInstance inst = sample_instance(kSpec, rng);
    const Context fwd = forward_context(inst);
    // (a)
    Policy tied = p;
    tie_conditioned_to_forward(tied);
    const auto group = itro::rollout_group(tied, inst, 8, 1.0, 4, rng);
    std::vector<Sequence> valid = itro::filter_valid(group, inst.answer);
    valid.push_back(*inst.golden);
    itro::ItroConfig cfg;
    cfg.n = 1;
    const auto step = itro::itro_step_grad(tied, inst, valid, cfg, rng);
    a_err = std::max(a_err, (step.grad - itro::filtered_sft_grad(tied, fwd, valid)).inf_norm());
    // (b)
    itro::RolloutGroup g2 = group;
    g2.rationales.push_back({*inst.golden, 1, true});
    const auto raft = baselines::raftpp_grad(p, p, inst, g2, baselines::BaselineConfig{});
    b_err = std::max(b_err,
                     (raft.grad - itro::filtered_sft_grad(p, fwd, itro::filter_valid(g2, inst.answer))).inf_norm());
  }
  const std::vector<double> rewards{1, 0, 0, 1};
  const auto adv = baselines::group_advantages(rewards, baselines::NormMode::std_dev, 1.0, 1e-8);
  const std::vector<double> expect{1, -1, -1, 1};
  double c_err = 0.0;
  for (std::size_t i = 0; i < 4; ++i) c_err = std::max(c_err, std::abs(adv[i] - expect[i]));
  const bool pass = a_err <= 1e-12 && b_err <= 1e-12 && c_err <= 1e-7;
  return {pass, fmt("(a) ITRO n=1 tied vs filtered SFT %.3g; (b) RAFT++ on-policy vs filtered SFT %.3g; "
                    "(c) GRPO advantages max dev %.3g",
                    a_err, b_err, c_err)};
}

Outcome training_efficacy() {
  const TrainingReport itro_r = train(training_config(Method::itro));
  const TrainingReport sft_r = train(training_config(Method::sft));
  const TrainingReport grpo_r = train(training_config(Method::grpo));
  const bool thresholds = itro_r.final_accuracy >= 0.9 && itro_r.final_accuracy >= sft_r.final_accuracy &&
                          itro_r.final_accuracy >= grpo_r.final_accuracy - 0.05 &&
                          itro_r.final_correct_len <= itro_r.initial_correct_len;
  const bool pinned = itro_r.final_accuracy == kPinnedItroFinalAccuracy &&
                      sft_r.final_accuracy == kPinnedSftFinalAccuracy &&
                      grpo_r.final_accuracy == kPinnedGrpoFinalAccuracy &&
                      std::abs(itro_r.final_correct_len - kPinnedItroFinalCorrectLen) <= kPinnedLenTolerance;
  Outcome o{thresholds && pinned, {}};
  o.detail = fmt("ITRO acc %.4g (init %.4g), SFT %.4g, GRPO %.4g", itro_r.final_accuracy, itro_r.initial_accuracy,
                 sft_r.final_accuracy, grpo_r.final_accuracy) +
             fmt("; ITRO E[|z| | correct] %.6f -> %.17g", itro_r.initial_correct_len, itro_r.final_correct_len) +
             (pinned ? "; matches pinned seed-7 values" : "; DIFFERS from pinned seed-7 values");
  return o;
}

Outcome n_ablation() {
  std::vector<double> acc;
  std::string detail = "final accuracy";
  std::string early = "; step-100 accuracy (reported only)";
  for (int n : {1, 2, 5}) {
    RunConfig c = training_config(Method::itro);
    c.itro.n = n;
    const TrainingReport r = train(c);
    acc.push_back(r.final_accuracy);
    detail += fmt(" n=%g:%.4g", n, acc.back());
    early += fmt(" n=%g:%.4g", n, r.records.at(99).accuracy.value_or(std::nan("")));
  }
  return {acc[0] <= acc[1] && acc[1] <= acc[2], detail + early};
}

Outcome kl_sanity() {
  bool ok = true;
  double mean = 0.0, dual = 0.0;
  int count = 0, zero_cases = 0;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const Policy p = random_tabular(8001, i);
    Rng rng = Rng::derive(8002, {i});
    const TaskInstance inst = sample_instance(kSpec, rng);
    const double kl = oracle::kl_true_vs_estimated(p, inst, 4).kl;
    ok = ok && std::isfinite(kl) && kl >= 0.0;
    dual = std::max(dual, std::abs(kl - reference::kl_direct(p, inst, 4)));
    mean += kl;
    ++count;
    Policy point = p;
    oracle::concentrate_on(point, forward_context(inst), *inst.golden);
    tie_conditioned_to_forward(point);
    ok = ok && oracle::kl_true_vs_estimated(point, inst, 4).kl == 0.0;
    ++zero_cases;
  }
  // reported, not asserted: KL of the trained seed-7 ITRO policy
  const TrainingReport r = train(training_config(Method::itro));
  double trained = 0.0;
  const auto inst_set = eval_instances(training_config(Method::itro));
  for (const auto& inst : inst_set) trained += oracle::kl_true_vs_estimated(r.final_policy, inst, 4).kl;
  trained /= static_cast<double>(inst_set.size());
  ok = ok && dual <= 1e-9;
  return {ok, fmt("finite and >= 0 on %g random pairs (mean %.4g nats), exactly 0 on %g equal-distribution "
                  "instances, direct-sum agreement %.3g",
                  count, mean / count, zero_cases, dual) +
                  fmt("; trained seed-7 ITRO mean KL %.4g nats (reported only)", trained)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "itrolab_acceptance_determinism";
  fs::remove_all(base);
  bool ok = true;
  std::ostringstream log;
  for (Method m : {Method::itro, Method::sft, Method::latro, Method::raftpp, Method::gpg, Method::grpo}) {
    RunConfig c = training_config(m);
    c.steps = 200;
    c.output_dir = (base / (to_string(m) + "_a")).string();
    ok = ok && run(c, log) == 0;
    c.output_dir = (base / (to_string(m) + "_b")).string();
    c.workers = 3;
    ok = ok && run(c, log) == 0;
    ok = ok && slurp(base / (to_string(m) + "_a") / "metrics.jsonl") ==
                   slurp(base / (to_string(m) + "_b") / "metrics.jsonl");
    const fs::path ck = base / (to_string(m) + "_a") / "checkpoint_final.txt";
    const Policy loaded = load_checkpoint(ck);
    const Policy again = checkpoint_from_text(checkpoint_to_text(loaded));
    for (std::size_t i = 0; i < loaded.num_params(); ++i) ok = ok && loaded.params()[i] == again.params()[i];
    ok = ok && checkpoint_to_text(again) == slurp(ck);
  }
  fs::remove_all(base);
  return {ok, "6 methods: byte-identical metrics.jsonl across two runs (1 vs 3 workers); checkpoint round trip bit-exact"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "proposition-1 identity", proposition_one},
      {2, "importance-weight factorization", factorization},
      {3, "clipping contract", clipping},
      {4, "estimator consistency", estimator_consistency},
      {5, "degenerate reductions", degenerate_reductions},
      {6, "training efficacy", training_efficacy},
      {7, "n-ablation shape", n_ablation},
      {8, "KL sanity", kl_sanity},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed;
}
