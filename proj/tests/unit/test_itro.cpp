#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fixtures.hpp"
#include "itrolab/itro.hpp"
#include "itrolab/oracle.hpp"
#include "reference.hpp"

using namespace itrolab;
using fixture::small_spec;
using fixture::toy_instance;
using fixture::toy_spec;

namespace {

// Forward distribution at the root is (0.002, 0.499, 0.499); conditioned is
// (0.7, 0.15, 0.15): raw ratio 350 on digit_0.
Policy adversarial(const TaskFamilySpec& spec = toy_spec()) {
  Policy p = Policy::tabular(spec);
  const std::vector<int> digits{1};
  const TaskInstance inst = make_instance(spec, digits);
  auto f = p.tabular_state(forward_context(inst), Sequence{});
  f[0] = std::log(0.002);
  f[1] = std::log(0.499);
  f[2] = std::log(0.499);
  auto c = p.tabular_state(conditioned_context(inst, p.vocab()), Sequence{});
  c[0] = std::log(0.7);
  c[1] = std::log(0.15);
  c[2] = std::log(0.15);
  return p;
}

itro::ItroConfig config_with(int n) {
  itro::ItroConfig c;
  c.n = n;
  return c;
}

}  // namespace

TEST(Itro, RolloutDeterministicGolden) {
  Policy p = Policy::tabular(small_spec());
  const TaskInstance inst = instance_at(small_spec(), 3, 0);
  const Context fwd = forward_context(inst);
  oracle::concentrate_on(p, fwd, *inst.golden);
  Rng rng(1);
  const auto group = itro::rollout_group(p, inst, 4, 1.0, 4, rng);
  ASSERT_EQ(group.rationales.size(), 4u);
  for (const auto& r : group.rationales) {
    EXPECT_EQ(r.z, *inst.golden);
    EXPECT_EQ(r.reward, 1);
    EXPECT_TRUE(r.valid);
  }
}

TEST(Itro, RolloutDeterministicInvalid) {
  Policy p = Policy::tabular(small_spec());
  const TaskInstance inst = instance_at(small_spec(), 3, 0);
  reference::make_deterministic(p, forward_context(inst), Sequence{}, p.vocab().eos());
  Rng rng(1);
  for (const auto& r : itro::rollout_group(p, inst, 4, 1.0, 4, rng).rationales) {
    EXPECT_EQ(r.reward, 0);
    EXPECT_FALSE(r.valid);
  }
}

TEST(Itro, RolloutMeanRewardMatchesMarginal) {
  const Policy p = Policy::tabular(toy_spec());
  const TaskInstance inst = toy_instance();
  Rng rng(2);
  const int groups = 10000;
  double hits = 0.0;
  for (int i = 0; i < groups; ++i) hits += 4 * itro::rollout_group(p, inst, 4, 1.0, 2, rng).mean_reward();
  const double n = 4.0 * groups;
  const double m = oracle::marginal(p, inst, 2);
  EXPECT_NEAR(hits / n, m, 3.0 * std::sqrt(m * (1 - m) / n));
}

TEST(Itro, FilterKeepsRewardOneInOrder) {
  const Vocabulary v(3);
  itro::RolloutGroup g;
  const Sequence a{v.digit(1), v.eos()}, b{v.eos()}, c{v.digit(2), v.eos()}, d{v.digit(0), v.digit(1), v.eos()};
  g.rationales = {{a, 1, true}, {b, 0, false}, {c, 0, true}, {d, 1, true}};
  const auto kept = itro::filter_valid(g, v.digit(1));
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0], a);
  EXPECT_EQ(kept[1], d);
  g.rationales = {{a, 1, true}, {a, 1, true}};
  EXPECT_EQ(itro::filter_valid(g, v.digit(1)).size(), 2u);
  g.rationales = {{b, 0, false}};
  EXPECT_TRUE(itro::filter_valid(g, v.digit(1)).empty());
}

TEST(Itro, SingleCandidateIsGroundTruth) {
  const Policy p = fixture::noisy(Arch::tabular, toy_spec(), 3);
  Rng rng(4);
  const auto step = itro::sample_candidates(p, toy_instance(), Sequence{}, 1, 1, 200.0, rng);
  ASSERT_EQ(step.candidates.size(), 1u);
  EXPECT_EQ(step.candidates[0].token, 1);
  EXPECT_TRUE(step.candidates[0].ground_truth);
}

TEST(Itro, DeterministicPolicyCandidates) {
  Policy p = Policy::tabular(toy_spec());
  const TaskInstance inst = toy_instance();
  reference::make_deterministic(p, forward_context(inst), Sequence{}, 1);
  Rng rng(5);
  const auto step = itro::sample_candidates(p, inst, Sequence{}, 1, 6, 200.0, rng);
  ASSERT_EQ(step.candidates.size(), 6u);
  for (const auto& c : step.candidates) EXPECT_EQ(c.token, 1);
}

TEST(Itro, GroundTruthIncludedExactlyOnceLast) {
  const Policy p = fixture::noisy(Arch::tabular, small_spec(), 6);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const TaskInstance inst = sample_instance(small_spec(), rng);
    const auto step = itro::sample_candidates(p, inst, Sequence{}, inst.answer, 5, 200.0, rng);
    ASSERT_EQ(step.candidates.size(), 5u);
    int flagged = 0;
    for (const auto& c : step.candidates) flagged += c.ground_truth;
    EXPECT_EQ(flagged, 1);
    EXPECT_TRUE(step.candidates.back().ground_truth);
    EXPECT_EQ(step.candidates.back().token, inst.answer);
  }
}

TEST(Itro, CandidateFrequenciesMatchNextDist) {
  const Policy p = fixture::noisy(Arch::tabular, small_spec(), 8);
  const TaskInstance inst = instance_at(small_spec(), 8, 0);
  const Distribution d = next_dist(p, forward_context(inst), Sequence{});
  Rng rng(9);
  std::vector<double> counts(d.size(), 0.0);
  const int draws = 100000;
  const int n = 5;
  for (int i = 0; i < draws / (n - 1); ++i) {
    const auto step = itro::sample_candidates(p, inst, Sequence{}, inst.answer, n, 200.0, rng);
    for (std::size_t k = 0; k + 1 < step.candidates.size(); ++k) ++counts[static_cast<std::size_t>(step.candidates[k].token)];
  }
  for (std::size_t v = 0; v < d.size(); ++v) {
    EXPECT_NEAR(counts[v], draws * d[v], 3.0 * std::sqrt(draws * d[v] * (1 - d[v])));
  }
}

TEST(Itro, CorrectionFactorTiedIsOne) {
  Policy p = fixture::noisy(Arch::tabular, small_spec(), 10);
  tie_conditioned_to_forward(p);
  const TaskInstance inst = instance_at(small_spec(), 10, 0);
  for (Token t = 0; t < p.vocab_size(); ++t) {
    EXPECT_EQ(itro::correction_factor(p, inst, Sequence{}, t, 200.0).w, 1.0);
  }
}

TEST(Itro, CorrectionFactorClipsAt200) {
  const Policy p = adversarial();
  const auto c = itro::correction_factor(p, toy_instance(), Sequence{}, 0, 200.0);
  EXPECT_NEAR(c.raw, 350.0, 1e-9);
  EXPECT_EQ(c.w, 200.0);
  EXPECT_TRUE(c.clipped());
}

TEST(Itro, CorrectionFactorZeroNumerator) {
  Policy p = Policy::tabular(toy_spec());
  const TaskInstance inst = toy_instance();
  p.tabular_state(conditioned_context(inst, p.vocab()), Sequence{})[0] = -1e6;
  EXPECT_EQ(itro::correction_factor(p, inst, Sequence{}, 0, 200.0).w, 0.0);
}

TEST(Itro, CorrectionFactorUnsampleable) {
  Policy p = Policy::tabular(toy_spec());
  const TaskInstance inst = toy_instance();
  p.tabular_state(forward_context(inst), Sequence{})[0] = -1e6;
  EXPECT_THROW(itro::correction_factor(p, inst, Sequence{}, 0, 200.0), std::domain_error);
}

TEST(Itro, ClipFractionMatchesHandCount) {
  // T_max = 3 admits the valid rationale [digit_0, digit_1, EOS], whose
  // ground-truth root token is the clipped one.
  const TaskFamilySpec spec{TaskFamily::sum_chain, 2, 1, 3};
  const Policy p = adversarial(spec);
  const std::vector<int> digits{1};
  const TaskInstance inst = make_instance(spec, digits);
  const std::vector<Sequence> valid{Sequence{1, 2}, Sequence{0, 1, 2}};
  const itro::ItroConfig cfg = config_with(40);
  Rng rng(11), replay(11);
  const auto result = itro::itro_step_grad(p, inst, valid, cfg, rng);
  std::size_t candidates = 0, clipped = 0;
  for (const Sequence& z : valid) {
    for (std::size_t t = 0; t < z.size(); ++t) {
      const auto step =
          itro::sample_candidates(p, inst, std::span<const Token>(z).first(t), z[t], cfg.n, cfg.w_max, replay);
      for (const auto& c : step.candidates) {
        ++candidates;
        if (c.raw_ratio > 200.0) {
          ++clipped;
          EXPECT_EQ(c.w, 200.0);
        }
        EXPECT_GE(c.w, 0.0);
        EXPECT_LE(c.w, 200.0);
      }
    }
  }
  EXPECT_GT(clipped, 0u);
  EXPECT_EQ(result.stats.candidates, candidates);
  EXPECT_EQ(result.stats.clipped, clipped);
  EXPECT_EQ(result.stats.clip_fraction, static_cast<double>(clipped) / static_cast<double>(candidates));
}

TEST(Itro, DegenerateNEqualsOneIsFilteredSft) {
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    Policy p = fixture::noisy(Arch::tabular, small_spec(), 400 + i);
    tie_conditioned_to_forward(p);
    const TaskInstance inst = sample_instance(small_spec(), rng);
    const Context fwd = forward_context(inst);
    std::vector<Sequence> valid{*inst.golden, Sequence{0, 1, inst.answer, p.vocab().eos()}};
    const auto result = itro::itro_step_grad(p, inst, valid, config_with(1), rng);
    const GradientVector sft = itro::filtered_sft_grad(p, fwd, valid);
    EXPECT_LE((result.grad - sft).inf_norm(), 1e-12);
    EXPECT_EQ(result.stats.mean_w, 1.0);
  }
}

TEST(Itro, ZeroWeightsGiveZeroGradient) {
  Policy p = Policy::tabular(toy_spec());
  const TaskInstance inst = toy_instance();
  const Context cond = conditioned_context(inst, p.vocab());
  // conditioned puts no mass on digit_1 at the root or on EOS after it
  p.tabular_state(cond, Sequence{})[1] = -1e6;
  p.tabular_state(cond, Sequence{1})[2] = -1e6;
  const std::vector<Sequence> valid{Sequence{1, 2}};
  Rng rng(13);
  const auto result = itro::itro_step_grad(p, inst, valid, config_with(1), rng);
  EXPECT_EQ(result.grad.inf_norm(), 0.0);
  EXPECT_EQ(result.loss, 0.0);
}

TEST(Itro, EmptyValidSetThrows) {
  const Policy p = Policy::tabular(toy_spec());
  Rng rng(1);
  EXPECT_THROW(itro::itro_step_grad(p, toy_instance(), std::vector<Sequence>{}, config_with(5), rng),
               std::invalid_argument);
}

TEST(Itro, StepMatchesCandidateExpectationOnAverage) {
  const Policy p = fixture::noisy(Arch::tabular, toy_spec(), 14);
  const TaskInstance inst = toy_instance();
  const std::vector<Sequence> valid{Sequence{1, 2}};
  const itro::ItroConfig cfg = config_with(5);
  const GradientVector exact = reference::expected_itro_grad(p, inst, valid, cfg.n, cfg.w_max);
  GradientVector mean(p.num_params());
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    Rng rng = Rng::derive(15, {static_cast<std::uint64_t>(i)});
    mean += itro::itro_step_grad(p, inst, valid, cfg, rng).grad;
  }
  mean *= 1.0 / draws;
  EXPECT_LE((mean - exact).l2_norm(), 0.05 * exact.l2_norm());
}

TEST(Itro, ThroughWeightGradientMatchesFiniteDifferences) {
  // With gradient flowing through w and no clipping, the objective for a
  // fixed candidate set is sum_i w_i log p_i; check that against fd.
  const Policy p = fixture::noisy(Arch::tabular, toy_spec(), 16, 0.5);
  const TaskInstance inst = toy_instance();
  const std::vector<Sequence> valid{Sequence{1, 2}};
  itro::ItroConfig cfg = config_with(3);
  cfg.stop_grad_through_w = false;
  Rng rng(17), replay(17);
  const auto result = itro::itro_step_grad(p, inst, valid, cfg, rng);
  std::vector<std::vector<Token>> tokens;
  for (std::size_t t = 0; t < valid[0].size(); ++t) {
    const auto step = itro::sample_candidates(p, inst, std::span<const Token>(valid[0]).first(t),
                                              valid[0][t], cfg.n, cfg.w_max, replay);
    tokens.emplace_back();
    for (const auto& c : step.candidates) tokens.back().push_back(c.token);
  }
  auto objective = [&](const Policy& q) {
    double s = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto prefix = std::span<const Token>(valid[0]).first(t);
      for (Token a : tokens[t]) {
        const auto c = itro::correction_factor(q, inst, prefix, a, cfg.w_max);
        s += c.w * std::log(c.forward_prob);
      }
    }
    return s / (static_cast<double>(valid[0].size()) * cfg.n);
  };
  EXPECT_NEAR(result.loss, objective(p), 1e-12);
  const auto numeric = oracle::fd_grad(objective, p, 1e-3);
  const auto cmp = oracle::compare_gradients(result.grad, numeric, 1e-6);
  EXPECT_LE(cmp.max_rel_err, 1e-5);
  EXPECT_LE(cmp.max_small_abs_err, 1e-10);
}

TEST(Itro, PooledNormalization) {
  Policy p = fixture::noisy(Arch::tabular, small_spec(), 18);
  tie_conditioned_to_forward(p);
  const TaskInstance inst = instance_at(small_spec(), 18, 0);
  const std::vector<Sequence> valid{*inst.golden, Sequence{0, 1, inst.answer, p.vocab().eos()}};
  itro::ItroConfig cfg = config_with(1);
  cfg.pooling = itro::Pooling::pooled;
  Rng rng(19);
  const auto result = itro::itro_step_grad(p, inst, valid, cfg, rng);
  GradientVector expect(p.num_params());
  const double total = static_cast<double>(valid[0].size() + valid[1].size());
  for (const Sequence& z : valid) expect.axpy(1.0 / total, grad_logprob(p, forward_context(inst), z));
  EXPECT_LE((result.grad - expect).inf_norm(), 1e-12);
}

TEST(Itro, WeightFactorization) {
  Rng rng(20);
  for (int i = 0; i < 50; ++i) {
    const Policy p = fixture::noisy(i % 2 ? Arch::linear : Arch::tabular, small_spec(), 500 + i);
    const TaskInstance inst = sample_instance(small_spec(), rng);
    const Sequence z = sample_sequence(p, forward_context(inst), 1.0, 4, rng);
    double sum = 0.0;
    for (double lw : itro::token_log_weights(p, inst, z)) sum += lw;
    EXPECT_NEAR(itro::sequence_log_weight(p, inst, z), sum, 1e-9);
  }
}

TEST(Itro, ConfigValidation) {
  itro::ItroConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.w_max = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.G = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
