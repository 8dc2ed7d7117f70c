#pragma once

#include <vector>

#include "itrolab/policy.hpp"
#include "itrolab/rng.hpp"
#include "itrolab/tasks.hpp"

namespace itrolab::fixture {

// V = 3 ({digit_0, digit_1, EOS}), T_max = 2, x = "1 =", y = digit_1.
inline TaskFamilySpec toy_spec() { return TaskFamilySpec{TaskFamily::sum_chain, 2, 1, 2}; }
inline TaskInstance toy_instance() {
  const std::vector<int> d{1};
  return make_instance(toy_spec(), d);
}

inline TaskFamilySpec small_spec() { return TaskFamilySpec{TaskFamily::sum_chain, 3, 2, 4}; }

inline Policy noisy(Arch arch, const TaskFamilySpec& spec, std::uint64_t seed, double sigma = 1.0) {
  Rng rng(seed);
  return init_policy(arch, spec, PolicyInit{InitKind::seeded_noise, sigma}, rng);
}

}  // namespace itrolab::fixture
