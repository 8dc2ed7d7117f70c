#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "itrolab/rng.hpp"

using itrolab::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DeriveIgnoresParentState) {
  Rng a = Rng::derive(7, {1, 2, 3});
  Rng b = Rng::derive(7, {1, 2, 3});
  Rng c = Rng::derive(7, {1, 2, 4});
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // mean 1/2, sd sqrt(1/12/n)
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, CategoricalFrequencies) {
  Rng r(9);
  const std::vector<double> p{0.2, 0.0, 0.5, 0.3};
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(r.categorical(p))];
  EXPECT_EQ(counts[1], 0);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double sd = std::sqrt(n * p[k] * (1 - p[k]));
    EXPECT_NEAR(counts[k], n * p[k], 3.0 * sd + 1e-9);
  }
}

TEST(Rng, CategoricalPointMass) {
  Rng r(1);
  const std::vector<double> p{0.0, 1.0, 0.0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(r.categorical(p), 1);
}
