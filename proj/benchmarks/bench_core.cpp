#include <benchmark/benchmark.h>

#include <vector>

#include "itrolab/itro.hpp"
#include "itrolab/oracle.hpp"
#include "itrolab/policy.hpp"

namespace {

using namespace itrolab;

TaskFamilySpec spec_for(int max_len) { return TaskFamilySpec{TaskFamily::sum_chain, 3, 2, max_len}; }

Policy noisy(Arch arch, const TaskFamilySpec& spec) {
  Rng rng(1);
  return init_policy(arch, spec, PolicyInit{InitKind::seeded_noise, 1.0}, rng);
}

void BM_Enumerate(benchmark::State& state) {
  const TaskFamilySpec spec = spec_for(static_cast<int>(state.range(0)));
  const Policy p = noisy(Arch::linear, spec);
  const TaskInstance inst = instance_at(spec, 1, 0);
  const int workers = static_cast<int>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(oracle::enumerate(p, forward_context(inst), spec.max_rationale_len, workers));
  }
  state.SetLabel("T_max=" + std::to_string(state.range(0)) + " workers=" + std::to_string(workers));
}
BENCHMARK(BM_Enumerate)->Args({4, 1})->Args({6, 1})->Args({6, 4})->Args({8, 1})->Args({8, 4})
    ->Unit(benchmark::kMillisecond);

void BM_GradLogprob(benchmark::State& state) {
  const Arch arch = state.range(0) ? Arch::linear : Arch::tabular;
  const TaskFamilySpec spec = spec_for(4);
  const Policy p = noisy(arch, spec);
  const TaskInstance inst = instance_at(spec, 1, 0);
  const Sequence z{0, 1, 2, 3};
  for (auto _ : state) benchmark::DoNotOptimize(grad_logprob(p, forward_context(inst), z));
  state.SetLabel(to_string(arch));
}
BENCHMARK(BM_GradLogprob)->Arg(0)->Arg(1);

void BM_ItroStepGrad(benchmark::State& state) {
  const TaskFamilySpec spec = spec_for(4);
  const Policy p = noisy(Arch::tabular, spec);
  const TaskInstance inst = instance_at(spec, 1, 0);
  const std::vector<Sequence> valid{*inst.golden, *inst.golden, *inst.golden, *inst.golden};
  itro::ItroConfig cfg;
  cfg.n = static_cast<int>(state.range(0));
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(itro::itro_step_grad(p, inst, valid, cfg, rng));
  state.SetLabel("n=" + std::to_string(cfg.n));
}
BENCHMARK(BM_ItroStepGrad)->Arg(1)->Arg(5)->Arg(40);

void BM_MllGradExact(benchmark::State& state) {
  const TaskFamilySpec spec = spec_for(4);
  const Policy p = noisy(Arch::tabular, spec);
  const TaskInstance inst = instance_at(spec, 1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(oracle::mll_grad_exact(p, inst, spec.max_rationale_len));
}
BENCHMARK(BM_MllGradExact)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
