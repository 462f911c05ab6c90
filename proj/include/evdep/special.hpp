#pragma once

// Scalar special functions used by the copula families.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>

namespace evdep::special {

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double norm_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

inline double t_cdf(double x, double nu) {
  return boost::math::cdf(boost::math::students_t_distribution<double>(nu), x);
}

inline double t_quantile(double p, double nu) {
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), p);
}

inline double t_logpdf(double x, double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) -
         0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

/// First Debye function D1(x) = (1/x) * integral_0^x t/(e^t - 1) dt, any sign.
inline double debye1(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x / 4.0;
  auto integrand = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
  const double lo = std::min(0.0, x), hi = std::max(0.0, x);
  double integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      integrand, lo, hi, 15, 1e-14);
  if (x < 0) integral = -integral;
  return integral / x;
}

}  // namespace evdep::special
