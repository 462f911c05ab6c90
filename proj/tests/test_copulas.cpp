#include "evdep/copulas.hpp"
#include "evdep/special.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace evdep;

namespace {

double clayton_cdf(double th, double u, double v) { return std::pow(std::pow(u, -th) + std::pow(v, -th) - 1.0, -1.0 / th); }

double ks_statistic(Eigen::VectorXd x) {
  std::sort(x.data(), x.data() + x.size());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x(i), x(i) - static_cast<double>(i) / n});
  return d;
}

// Kolmogorov critical value at level 0.01
double ks_critical(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

std::vector<BivariateCopula> family_grid() {
  return {{Family::Independence, 0, 0}, {Family::Gaussian, -0.6, 0}, {Family::Gaussian, 0.3, 0},
          {Family::Gaussian, 0.9, 0},   {Family::Clayton, 0.5, 0},   {Family::Clayton, 3.0, 0},
          {Family::Clayton, 8.0, 0},    {Family::Frank, -6.0, 0},    {Family::Frank, 1.5, 0},
          {Family::Frank, 12.0, 0},     {Family::Gumbel, 1.2, 0},    {Family::Gumbel, 2.5, 0},
          {Family::Gumbel, 5.0, 0},     {Family::StudentT, 0.5, 3},  {Family::StudentT, -0.4, 10}};
}

}  // namespace

TEST(Debye, MatchesQuadrature) {
  for (double x : {-7.0, -0.5, 0.1, 1.0, 5.736, 20.0}) {
    // composite Simpson on t/(e^t - 1)
    const int m = 20000;
    const double h = x / m;
    auto f = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
    double s = f(0.0) + f(x);
    for (int k = 1; k < m; ++k) s += (k % 2 ? 4.0 : 2.0) * f(k * h);
    EXPECT_NEAR(special::debye1(x), s * h / 3.0 / x, 1e-10) << x;
  }
}

TEST(InverseTau, Examples) {
  EXPECT_DOUBLE_EQ(copula_from_tau(Family::Gaussian, 0.0).theta, 0.0);
  EXPECT_NEAR(copula_from_tau(Family::Clayton, 0.5).theta, 2.0, 1e-12);
  EXPECT_NEAR(copula_from_tau(Family::Gumbel, 0.5).theta, 2.0, 1e-12);
  const auto f = copula_from_tau(Family::Frank, 0.5);
  EXPECT_NEAR(f.theta, 5.736, 1e-3);
  EXPECT_NEAR(kendall_tau_of(f), 0.5, 1e-10);
  EXPECT_NEAR(copula_from_tau(Family::Frank, -0.5).theta, -f.theta, 1e-9);
  EXPECT_NEAR(copula_from_tau(Family::Gaussian, 0.5).theta, std::sin(std::numbers::pi / 4), 1e-15);
  EXPECT_EQ(copula_from_tau(Family::Clayton, 0.0).family, Family::Independence);
}

TEST(InverseTau, Errors) {
  try {
    copula_from_tau(Family::Clayton, -0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedDependence);
  }
  EXPECT_THROW(copula_from_tau(Family::Gumbel, -0.1), Error);
  try {
    copula_from_tau(Family::Gaussian, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Boundary);
  }
}

TEST(InverseTau, MonteCarloTau) {
  for (const auto& c : {BivariateCopula{Family::Clayton, 2.0, 0}, copula_from_tau(Family::Frank, 0.5),
                        BivariateCopula{Family::Gumbel, 2.0, 0}}) {
    const Matrix s = sample_pair(c, 100000, 21);
    EXPECT_NEAR(kendall_tau(Eigen::VectorXd(s.col(0)), Eigen::VectorXd(s.col(1))), 0.5, 0.01) << to_string(c.family);
  }
}

TEST(InverseTau, RoundTrip) {
  for (const auto& c : family_grid()) {
    if (c.family == Family::Independence) continue;
    const Matrix s = sample_pair(c, is_elliptical(c.family) ? 20000 : 100000, 8);
    const auto fit = fit_inverse_tau(c.family, s.col(0), s.col(1));
    const double tol = is_elliptical(c.family) ? 0.02 : 0.05 * std::max(1.0, c.theta);
    EXPECT_NEAR(fit.theta, c.theta, tol) << to_string(c.family) << " " << c.theta;
  }
}

TEST(PairDensity, Examples) {
  EXPECT_DOUBLE_EQ(pair_density({}, 0.2, 0.9), 1.0);
  EXPECT_NEAR(pair_density({Family::Gaussian, 0.0, 0}, 0.3, 0.7), 1.0, 1e-14);
  const double h = 1e-4, u = 0.5, v = 0.5;
  const double fd = (clayton_cdf(2, u + h, v + h) - clayton_cdf(2, u + h, v - h) - clayton_cdf(2, u - h, v + h) +
                     clayton_cdf(2, u - h, v - h)) /
                    (4 * h * h);
  EXPECT_NEAR(pair_density({Family::Clayton, 2.0, 0}, u, v) / fd, 1.0, 1e-4);
  EXPECT_THROW(pair_density({Family::Clayton, 2.0, 0}, 0.0, 0.5), Error);
}

TEST(PairDensity, IntegratesToOne) {
  for (const auto& c : family_grid()) {
    double total = 0.0;
    bool nonneg = true;
    for (int i = 0; i < 200; ++i)
      for (int j = 0; j < 200; ++j) {
        const double d = pair_density(c, (i + 0.5) / 200, (j + 0.5) / 200);
        nonneg = nonneg && d >= 0.0;
        total += d;
      }
    EXPECT_TRUE(nonneg);
    EXPECT_NEAR(total / 40000.0, 1.0, 0.02) << to_string(c.family) << " " << c.theta;
  }
}

TEST(PairDensity, Exchangeable) {
  for (const auto& c : family_grid())
    for (double u : {0.1, 0.37, 0.8})
      for (double v : {0.05, 0.5, 0.93})
        EXPECT_NEAR(pair_log_density(c, u, v), pair_log_density(c, v, u), 1e-10) << to_string(c.family);
}

TEST(HFunction, Examples) {
  EXPECT_DOUBLE_EQ(h_function({}, 0.3, 0.8), 0.3);
  EXPECT_NEAR(h_function({Family::Gaussian, 0.7, 0}, 0.5, 0.5), 0.5, 1e-14);
  const double h = 1e-5;
  const double fd = (clayton_cdf(2, 0.3, 0.6 + h) - clayton_cdf(2, 0.3, 0.6 - h)) / (2 * h);
  EXPECT_NEAR(h_function({Family::Clayton, 2.0, 0}, 0.3, 0.6) / fd, 1.0, 1e-4);
}

TEST(HFunction, InverseIdentityAndMonotone) {
  for (const auto& c : family_grid())
    for (int j = 0; j < 20; ++j) {
      const double v = (j + 0.5) / 20;
      double prev = -1.0;
      for (int i = 0; i < 20; ++i) {
        const double u = (i + 0.5) / 20;
        const double p = h_function(c, u, v);
        EXPECT_GE(p, prev);
        prev = p;
        // where h is this flat in u, p no longer carries enough digits to pin u down
        if (pair_density(c, u, v) < 1e-6) continue;
        EXPECT_NEAR(h_inverse(c, p, v), u, 1e-8) << to_string(c.family) << " " << c.theta << " " << u << " " << v;
      }
    }
}

TEST(SamplePair, UniformMarginals) {
  const Matrix ind = sample_pair({}, 10000, 4);
  EXPECT_LT(std::abs(kendall_tau(Eigen::VectorXd(ind.col(0)), Eigen::VectorXd(ind.col(1)))), 0.03);
  for (const auto& c : {BivariateCopula{Family::Clayton, 2.0, 0}, BivariateCopula{Family::Gumbel, 3.0, 0},
                        BivariateCopula{Family::StudentT, 0.5, 4}}) {
    const Matrix s = sample_pair(c, 10000, 5);
    for (int k = 0; k < 2; ++k) EXPECT_LT(ks_statistic(s.col(k)), ks_critical(10000)) << to_string(c.family);
    EXPECT_GT(s.minCoeff(), 0.0);
    EXPECT_LT(s.maxCoeff(), 1.0);
  }
  EXPECT_EQ(sample_pair({Family::Frank, 3.0, 0}, 100, 9), sample_pair({Family::Frank, 3.0, 0}, 100, 9));
}

TEST(FitMle, NotWorseThanInverseTau) {
  const Matrix s = sample_pair({Family::Gumbel, 1.8, 0}, 5000, 12);
  const Eigen::VectorXd u = s.col(0), v = s.col(1);
  for (Family f : {Family::Gaussian, Family::Clayton, Family::Frank, Family::Gumbel, Family::StudentT}) {
    const auto a = fit_inverse_tau(f, u, v), b = fit_mle(f, u, v);
    EXPECT_GE(pair_loglik(b, u, v), pair_loglik(a, u, v) - 1e-9) << to_string(f);
  }
  EXPECT_NEAR(fit_mle(Family::Gumbel, u, v).theta, 1.8, 0.05);
}

TEST(Elliptical3D, SineMap) {
  Rng rng(1);
  const Matrix ind = sample_elliptical_3d({Family::Gaussian, Eigen::Matrix3d::Identity(), 0}, 10000, rng);
  const Matrix t = kendall_matrix(ind);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_LT(std::abs(t(i, j)), 0.03);
  const auto fit_ind = fit_elliptical_3d(Family::Gaussian, ind);
  EXPECT_LT((fit_ind.corr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 0.05);

  Eigen::Matrix3d r = Eigen::Matrix3d::Constant(std::sin(std::numbers::pi / 4));
  r.diagonal().setOnes();
  const Matrix s = sample_elliptical_3d({Family::Gaussian, r, 0}, 100000, rng);
  const Matrix ts = kendall_matrix(s);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(ts(i, j), 0.5, 0.02);
  const auto fit = fit_elliptical_3d(Family::Gaussian, s);
  EXPECT_LT((fit.corr - r).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Elliptical3D, NearestCorrelation) {
  Eigen::Matrix3d r;
  r << 1, 0.95, 0.95, 0.95, 1, 0.3, 0.95, 0.3, 1;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> before(r);
  ASSERT_LT(before.eigenvalues().minCoeff(), 0.0);
  const Eigen::Matrix3d c = nearest_correlation(r);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> after(c);
  EXPECT_GE(after.eigenvalues().minCoeff(), 1e-6 * (1 - 1e-9));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(c(i, i), 1.0, 1e-12);
  EXPECT_NEAR((c - c.transpose()).norm(), 0.0, 1e-15);
  EXPECT_EQ(nearest_correlation(Eigen::Matrix3d::Identity()), Eigen::Matrix3d::Identity());
}

TEST(Elliptical3D, StudentTailHeavierThanGaussian) {
  Rng rng(31);
  const Matrix g = sample_elliptical_3d({Family::Gaussian, Eigen::Matrix3d::Identity(), 0}, 100000, rng);
  const Matrix t = sample_elliptical_3d({Family::StudentT, Eigen::Matrix3d::Identity(), 3}, 100000, rng);
  auto upper = [](const Matrix& u) {
    double both = 0, one = 0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (u(i, 1) > 0.95) {
        ++one;
        if (u(i, 0) > 0.95) ++both;
      }
    }
    return both / one;
  };
  EXPECT_GT(upper(t), upper(g));
}

TEST(Elliptical3D, GaussianFactorizesWithIndependentThird) {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 1) = r(1, 0) = 0.6;
  const EllipticalCopula3D c{Family::Gaussian, r, 0};
  const Eigen::Vector3d u(0.2, 0.7, 0.4);
  EXPECT_NEAR(elliptical_log_density(c, u), pair_log_density({Family::Gaussian, 0.6, 0}, 0.2, 0.7), 1e-10);
}

TEST(Archimedean3D, FitAndSample) {
  for (Family f : {Family::Clayton, Family::Gumbel, Family::Frank}) {
    const auto c0 = copula_from_tau(f, 0.4);
    Rng rng(7);
    const Matrix s = sample_archimedean_3d({f, c0.theta, false}, 50000, rng);
    const Matrix t = kendall_matrix(s);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) EXPECT_NEAR(t(i, j), 0.4, 0.015) << to_string(f);
    for (int k = 0; k < 3; ++k) EXPECT_LT(ks_statistic(s.col(k)), ks_critical(50000)) << to_string(f);
    const auto fit = fit_archimedean_3d(f, s);
    EXPECT_FALSE(fit.clamped_to_independence);
    EXPECT_NEAR(fit.theta, c0.theta, 0.05 * std::max(1.0, c0.theta));
  }
}

TEST(Archimedean3D, NegativeMeanTauClamps) {
  Rng rng(2);
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 1) = r(1, 0) = -0.7;
  const Matrix s = sample_elliptical_3d({Family::Gaussian, r, 0}, 2000, rng);
  const auto fit = fit_archimedean_3d(Family::Clayton, s);
  EXPECT_TRUE(fit.clamped_to_independence);
  const Matrix draws = sample_archimedean_3d(fit, 5000, rng);
  EXPECT_LT(kendall_matrix(draws).cwiseAbs().topRightCorner(1, 2).maxCoeff(), 0.05);
}

TEST(CopulaJson, RoundTrip) {
  for (const auto& c : family_grid()) {
    const auto back = bivariate_from_json(nlohmann::json::parse(to_json(c).dump()));
    EXPECT_EQ(back.family, c.family);
    EXPECT_NEAR(back.theta, c.theta, 1e-12 * std::max(1.0, std::abs(c.theta)));
    EXPECT_NEAR(back.nu, c.nu, 1e-12 * std::max(1.0, c.nu));
  }
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 2) = r(2, 0) = 1.0 / 3.0;
  const EllipticalCopula3D e{Family::StudentT, r, 7};
  const auto eb = elliptical_from_json(nlohmann::json::parse(to_json(e).dump()));
  EXPECT_LT((eb.corr - r).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(eb.nu, 7.0);
  const ArchimedeanCopula3D a{Family::Gumbel, 1.0 + 1.0 / 7.0, false};
  EXPECT_NEAR(archimedean_from_json(nlohmann::json::parse(to_json(a).dump())).theta, a.theta, 1e-15);
}
