#include "evdep/kendall.hpp"

#include <gtest/gtest.h>

using namespace evdep;

TEST(KendallTau, Examples) {
  const std::vector<double> a{1, 2, 3}, b{3, 2, 1};
  EXPECT_DOUBLE_EQ(kendall_tau(a, a), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(a, b), -1.0);
  const std::vector<double> x{1, 2, 3, 4}, y{2, 1, 4, 3};
  EXPECT_NEAR(kendall_tau(x, y), 1.0 / 3.0, 1e-15);
}

TEST(KendallTau, TieCorrection) {
  // 7 concordant, 1 discordant, one pair tied in x only, one tied in y only
  const std::vector<double> x{1, 1, 2, 3, 4}, y{1, 2, 2, 4, 3};
  EXPECT_NEAR(kendall_tau(x, y), 6.0 / 9.0, 1e-15);
  EXPECT_NEAR(kendall_tau_naive(x, y), 6.0 / 9.0, 1e-15);
}

TEST(KendallTau, FastMatchesNaive) {
  Rng rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 2 + rng.below(300);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(rep % 3 == 0 ? 5 : 1000));
      y[i] = 0.5 * x[i] + static_cast<double>(rng.below(rep % 2 == 0 ? 4 : 1000));
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) x[0] += 1;
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) y[0] += 1;
    EXPECT_NEAR(kendall_tau(x, y), kendall_tau_naive(x, y), 1e-12) << "rep " << rep;
  }
}

TEST(KendallTau, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{5, 5, 5}, one{1};
  EXPECT_THROW(kendall_tau(a, b), Error);
  EXPECT_THROW(kendall_tau(a, c), Error);
  EXPECT_THROW(kendall_tau(one, one), Error);
}

TEST(KendallMatrix, Structure) {
  Rng rng(3);
  Matrix x(200, 3);
  for (Eigen::Index i = 0; i < 200; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = x(i, 0) + rng.normal();
    x(i, 2) = -x(i, 1) + 0.3 * rng.normal();
  }
  const Matrix t = kendall_matrix(x);
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(t(i, i), 1.0);
    for (int j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(t(i, j), t(j, i));
      EXPECT_LE(std::abs(t(i, j)), 1.0);
    }
  }
  EXPECT_GT(t(0, 1), 0.0);
  EXPECT_LT(t(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(kendall_distance(x, x), 0.0);
}
