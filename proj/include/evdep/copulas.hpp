#pragma once

// Bivariate copula families (density, h-functions, sampling, inverse-tau and
// likelihood fitting), 3-D elliptical copulas and exchangeable 3-D
// Archimedean copulas.

#include "evdep/core.hpp"
#include "evdep/kendall.hpp"
#include "evdep/special.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace evdep {

enum class Family { Independence, Gaussian, Clayton, Frank, Gumbel, StudentT };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Independence: return "Independence";
    case Family::Gaussian: return "Gaussian";
    case Family::Clayton: return "Clayton";
    case Family::Frank: return "Frank";
    case Family::Gumbel: return "Gumbel";
    case Family::StudentT: return "StudentT";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (Family f : {Family::Independence, Family::Gaussian, Family::Clayton, Family::Frank,
                   Family::Gumbel, Family::StudentT})
    if (s == to_string(f)) return f;
  if (s == "Student-t" || s == "StudentT" || s == "t") return Family::StudentT;
  throw Error(ErrorCode::InvalidArgument, "unknown copula family '" + s + "'");
}

inline bool is_elliptical(Family f) { return f == Family::Gaussian || f == Family::StudentT; }
inline bool is_archimedean(Family f) {
  return f == Family::Clayton || f == Family::Frank || f == Family::Gumbel;
}

/// Number of free parameters (AIC penalty).
inline int parameter_count(Family f) {
  switch (f) {
    case Family::Independence: return 0;
    case Family::StudentT: return 2;
    default: return 1;
  }
}

/// Parameter box used for likelihood refinement and clamping of inverse-tau
/// estimates.
struct ParameterRange {
  double lo, hi;
};

inline ParameterRange parameter_range(Family f) {
  switch (f) {
    case Family::Gaussian:
    case Family::StudentT: return {-0.995, 0.995};
    case Family::Clayton: return {1e-4, 40.0};
    case Family::Gumbel: return {1.0, 40.0};
    case Family::Frank: return {-40.0, 40.0};
    case Family::Independence: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

/// Student-t degrees-of-freedom candidates for the profile likelihood.
inline constexpr std::array<double, 9> kStudentNuGrid{2.5, 3, 4, 5, 7, 10, 15, 20, 30};

struct BivariateCopula {
  Family family = Family::Independence;
  double theta = 0.0;  ///< rho for elliptical families, theta for Archimedean
  double nu = 0.0;     ///< degrees of freedom, StudentT only

  static BivariateCopula independence() { return {}; }

  void validate() const {
    switch (family) {
      case Family::Independence: break;
      case Family::Gaussian:
        require(theta > -1.0 && theta < 1.0, ErrorCode::InvalidArgument, "Gaussian rho must lie in (-1,1)");
        break;
      case Family::StudentT:
        require(theta > -1.0 && theta < 1.0, ErrorCode::InvalidArgument, "Student-t rho must lie in (-1,1)");
        require(nu > 2.0, ErrorCode::InvalidArgument, "Student-t nu must exceed 2");
        break;
      case Family::Clayton:
        require(theta > 0.0, ErrorCode::InvalidArgument, "Clayton theta must be positive");
        break;
      case Family::Gumbel:
        require(theta >= 1.0, ErrorCode::InvalidArgument, "Gumbel theta must be >= 1");
        break;
      case Family::Frank:
        require(theta != 0.0 && std::isfinite(theta), ErrorCode::InvalidArgument, "Frank theta must be non-zero");
        break;
    }
  }

  friend bool operator==(const BivariateCopula&, const BivariateCopula&) = default;
};

namespace detail {

inline double clamp_open(double u) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::clamp(u, lo, hi);
}

inline void check_unit_args(double u, double v) {
  require(is_interior(u) && is_interior(v), ErrorCode::Boundary,
          "copula arguments must lie strictly inside (0,1)");
}

inline double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Frank with |theta| this small is evaluated as independence.
inline constexpr double kFrankTiny = 1e-6;

struct GumbelTerms {
  double log_x, log_y, log_s, a;
};

inline GumbelTerms gumbel_terms(double theta, double u, double v) {
  const double lx = std::log(-std::log(u)), ly = std::log(-std::log(v));
  const double ls = log_add_exp(theta * lx, theta * ly);
  return {lx, ly, ls, std::exp(ls / theta)};
}

// Monotone bisection of h(., v) = p on (0,1).
template <class H>
double bisect_h(H&& h, double p) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) < p) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-15) return clamp_open(0.5 * (lo + hi));
  }
  throw Error(ErrorCode::NotConverged, "h_inverse: bisection did not converge in 200 steps");
}

}  // namespace detail

/// log c(u,v).
inline double pair_log_density(const BivariateCopula& c, double u, double v) {
  detail::check_unit_args(u, v);
  const double th = c.theta;
  switch (c.family) {
    case Family::Independence: return 0.0;
    case Family::Gaussian: {
      const double x = special::norm_quantile(u), y = special::norm_quantile(v);
      const double r2 = 1.0 - th * th;
      return -0.5 * std::log(r2) - (th * th * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * r2);
    }
    case Family::StudentT: {
      const double nu = c.nu;
      const double x = special::t_quantile(u, nu), y = special::t_quantile(v, nu);
      const double r2 = 1.0 - th * th;
      return std::lgamma(0.5 * (nu + 2.0)) + std::lgamma(0.5 * nu) - 2.0 * std::lgamma(0.5 * (nu + 1.0)) -
             0.5 * std::log(r2) -
             0.5 * (nu + 2.0) * std::log1p((x * x + y * y - 2.0 * th * x * y) / (nu * r2)) +
             0.5 * (nu + 1.0) * (std::log1p(x * x / nu) + std::log1p(y * y / nu));
    }
    case Family::Clayton: {
      const double lu = std::log(u), lv = std::log(v);
      const double s = std::exp(-th * lu) + std::exp(-th * lv) - 1.0;
      return std::log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * std::log(s);
    }
    case Family::Frank: {
      if (std::abs(th) < detail::kFrankTiny) return 0.0;
      const double a = -std::expm1(-th);  // 1 - e^{-theta}
      const double den = a - std::expm1(-th * u) * std::expm1(-th * v);
      return std::log(th * a) - th * (u + v) - 2.0 * std::log(std::abs(den));
    }
    case Family::Gumbel: {
      const auto g = detail::gumbel_terms(th, u, v);
      return -g.a - std::log(u) - std::log(v) + (th - 1.0) * (g.log_x + g.log_y) - 2.0 * g.log_s +
             std::log(g.a) + std::log(g.a + th - 1.0);
    }
  }
  return 0.0;
}

inline double pair_density(const BivariateCopula& c, double u, double v) {
  return std::exp(pair_log_density(c, u, v));
}

/// Conditional distribution h(u|v) = dC(u,v)/dv.
inline double h_function(const BivariateCopula& c, double u, double v) {
  detail::check_unit_args(u, v);
  const double th = c.theta;
  double h = u;
  switch (c.family) {
    case Family::Independence: return u;
    case Family::Gaussian: {
      const double x = special::norm_quantile(u), y = special::norm_quantile(v);
      h = special::norm_cdf((x - th * y) / std::sqrt(1.0 - th * th));
      break;
    }
    case Family::StudentT: {
      const double nu = c.nu;
      const double x = special::t_quantile(u, nu), y = special::t_quantile(v, nu);
      const double scale = std::sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0));
      h = special::t_cdf((x - th * y) / scale, nu + 1.0);
      break;
    }
    case Family::Clayton: {
      const double lu = std::log(u), lv = std::log(v);
      const double s = std::exp(-th * lu) + std::exp(-th * lv) - 1.0;
      h = std::exp((-th - 1.0) * lv + (-1.0 - 1.0 / th) * std::log(s));
      break;
    }
    case Family::Frank: {
      if (std::abs(th) < detail::kFrankTiny) return u;
      const double num = std::exp(-th * v) * std::expm1(-th * u);
      const double den = std::expm1(-th) + std::expm1(-th * u) * std::expm1(-th * v);
      h = num / den;
      break;
    }
    case Family::Gumbel: {
      const auto g = detail::gumbel_terms(th, u, v);
      h = std::exp(-g.a + (1.0 / th - 1.0) * g.log_s + (th - 1.0) * g.log_y - std::log(v));
      break;
    }
  }
  return std::clamp(h, 0.0, 1.0);
}

/// Solves h(u|v) = p for u; p in {0, 1} maps to the nearest interior point.
inline double h_inverse(const BivariateCopula& c, double p, double v) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::Boundary, "h_inverse: p must lie in [0,1]");
  require(is_interior(v), ErrorCode::Boundary, "copula arguments must lie strictly inside (0,1)");
  p = detail::clamp_open(p);
  const double th = c.theta;
  switch (c.family) {
    case Family::Independence: return p;
    case Family::Gaussian: {
      const double y = special::norm_quantile(v);
      const double x = special::norm_quantile(p) * std::sqrt(1.0 - th * th) + th * y;
      return detail::clamp_open(special::norm_cdf(x));
    }
    case Family::StudentT: {
      const double nu = c.nu;
      const double y = special::t_quantile(v, nu);
      const double scale = std::sqrt((nu + y * y) * (1.0 - th * th) / (nu + 1.0));
      const double x = special::t_quantile(p, nu + 1.0) * scale + th * y;
      return detail::clamp_open(special::t_cdf(x, nu));
    }
    case Family::Clayton: {
      // u^{-th} = 1 + v^{-th} (p^{-th/(1+th)} - 1), evaluated in logs
      const double w = std::expm1(-th / (1.0 + th) * std::log(p));
      const double a = -th * std::log(v) + std::log(w);
      const double log1p_ea = a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
      return detail::clamp_open(std::exp(-log1p_ea / th));
    }
    case Family::Frank: {
      if (std::abs(th) < detail::kFrankTiny) return p;
      const double ev = std::exp(-th * v);
      const double a = p * std::expm1(-th) / (ev - p * std::expm1(-th * v));  // e^{-th u} - 1
      return detail::clamp_open(-std::log1p(a) / th);
    }
    case Family::Gumbel:
      return detail::bisect_h([&](double u) { return h_function(c, u, v); }, p);
  }
  return p;
}

/// Model-implied Kendall's tau.
inline double kendall_tau_of(const BivariateCopula& c) {
  switch (c.family) {
    case Family::Independence: return 0.0;
    case Family::Gaussian:
    case Family::StudentT: return 2.0 / std::numbers::pi * std::asin(c.theta);
    case Family::Clayton: return c.theta / (c.theta + 2.0);
    case Family::Gumbel: return 1.0 - 1.0 / c.theta;
    case Family::Frank:
      if (std::abs(c.theta) < detail::kFrankTiny) return 0.0;
      return 1.0 - 4.0 / c.theta * (1.0 - special::debye1(c.theta));
  }
  return 0.0;
}

/// Frank theta with tau(theta) = tau by bisection; |theta| capped at 50.
inline double frank_theta_from_tau(double tau) {
  if (tau == 0.0) return 0.0;
  auto tau_of = [](double th) { return kendall_tau_of({Family::Frank, th, 0.0}); };
  const double sign = tau > 0 ? 1.0 : -1.0;
  double lo = 1e-6, hi = 50.0;  // in |theta|; odd symmetry tau(-th) = -tau(th)
  const double target = std::abs(tau);
  if (tau_of(hi) <= target) return sign * hi;
  if (tau_of(lo) >= target) return sign * lo;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double t = tau_of(mid);
    if (std::abs(t - target) < 1e-10) return sign * mid;
    if (t < target) lo = mid;
    else hi = mid;
  }
  return sign * 0.5 * (lo + hi);
}

/// Inverse-Kendall's-tau parameter for a one-parameter family. For StudentT
/// only rho is set here; nu needs data (see fit_inverse_tau on a pair).
inline BivariateCopula copula_from_tau(Family family, double tau) {
  require(std::isfinite(tau), ErrorCode::Numerical, "Kendall's tau is not finite");
  require(std::abs(tau) < 1.0, ErrorCode::Boundary, "|tau| = 1: perfect dependence is not representable");
  switch (family) {
    case Family::Independence: return {};
    case Family::Gaussian:
    case Family::StudentT: {
      const auto r = parameter_range(family);
      const double rho = std::clamp(std::sin(std::numbers::pi * tau / 2.0), r.lo, r.hi);
      return {family, rho, family == Family::StudentT ? 4.0 : 0.0};
    }
    case Family::Clayton: {
      require(tau >= 0.0, ErrorCode::UnsupportedDependence, "Clayton cannot represent negative tau");
      if (tau == 0.0) return {};
      return {family, std::min(2.0 * tau / (1.0 - tau), parameter_range(family).hi), 0.0};
    }
    case Family::Gumbel: {
      require(tau >= 0.0, ErrorCode::UnsupportedDependence, "Gumbel cannot represent negative tau");
      if (tau == 0.0) return {};
      return {family, std::min(1.0 / (1.0 - tau), parameter_range(family).hi), 0.0};
    }
    case Family::Frank: {
      const double th = frank_theta_from_tau(tau);
      if (th == 0.0) return {};
      return {family, th, 0.0};
    }
  }
  return {};
}

inline double pair_loglik(const BivariateCopula& c, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (c.family == Family::Independence) return 0.0;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) ll += pair_log_density(c, u(i), v(i));
  return std::isfinite(ll) ? ll : -std::numeric_limits<double>::infinity();
}

namespace detail {

// Normal or Student-t scores of a pair for one nu (0 = Gaussian), so the
// elliptical likelihood can be re-evaluated over rho without new quantiles.
struct EllipticalScores {
  double nu = 0.0;
  Eigen::ArrayXd x, y, marg;  ///< marg: Student-t marginal log term per row
};

inline EllipticalScores elliptical_scores(double nu, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  EllipticalScores s;
  s.nu = nu;
  s.x.resize(u.size());
  s.y.resize(u.size());
  s.marg.setZero(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    check_unit_args(u(i), v(i));
    if (nu == 0.0) {
      s.x(i) = special::norm_quantile(u(i));
      s.y(i) = special::norm_quantile(v(i));
    } else {
      s.x(i) = special::t_quantile(u(i), nu);
      s.y(i) = special::t_quantile(v(i), nu);
      s.marg(i) = 0.5 * (nu + 1.0) * (std::log1p(s.x(i) * s.x(i) / nu) + std::log1p(s.y(i) * s.y(i) / nu));
    }
  }
  return s;
}

inline double elliptical_pair_loglik(const EllipticalScores& s, double rho) {
  const double r2 = 1.0 - rho * rho;
  const auto n = static_cast<double>(s.x.size());
  double ll;
  if (s.nu == 0.0) {
    ll = -0.5 * std::log(r2) * n -
         (rho * rho * (s.x.square() + s.y.square()) - 2.0 * rho * s.x * s.y).sum() / (2.0 * r2);
  } else {
    const double nu = s.nu;
    const double c = std::lgamma(0.5 * (nu + 2.0)) + std::lgamma(0.5 * nu) - 2.0 * std::lgamma(0.5 * (nu + 1.0)) -
                     0.5 * std::log(r2);
    const Eigen::ArrayXd q = (s.x.square() + s.y.square() - 2.0 * rho * s.x * s.y) / (nu * r2);
    ll = c * n - 0.5 * (nu + 2.0) * q.log1p().sum() + s.marg.sum();
  }
  return std::isfinite(ll) ? ll : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Student-t nu maximizing the pair likelihood at fixed rho.
inline double profile_student_nu(double rho, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  double best_nu = kStudentNuGrid.front();
  double best_ll = -std::numeric_limits<double>::infinity();
  for (double nu : kStudentNuGrid) {
    const double ll = detail::elliptical_pair_loglik(detail::elliptical_scores(nu, u, v), rho);
    if (ll > best_ll) {
      best_ll = ll;
      best_nu = nu;
    }
  }
  return best_nu;
}

/// Inverse-tau fit of `family` to a pair of pseudo-observation columns.
inline BivariateCopula fit_inverse_tau(Family family, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  BivariateCopula c = copula_from_tau(family, kendall_tau(u, v));
  if (c.family == Family::StudentT) c.nu = profile_student_nu(c.theta, u, v);
  return c;
}

/// Golden-section maximization of f on [lo, hi].
template <class F>
double golden_section_max(F&& f, double lo, double hi, double tol = 1e-6) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 200 && (b - a) > tol; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

/// Inverse-tau start then 1-D likelihood refinement over a bracket of
/// +-50% of the admissible range around the start. Student-t refines rho
/// for every nu on the grid and keeps the best pair.
inline BivariateCopula fit_mle(Family family, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  require(u.size() == v.size() && u.size() >= 2, ErrorCode::InvalidArgument, "fit_mle: bad input columns");
  const BivariateCopula start = copula_from_tau(family, kendall_tau(u, v));
  if (start.family == Family::Independence) return start;
  const auto range = parameter_range(family);
  const double half = 0.5 * (range.hi - range.lo);
  const double lo = std::max(range.lo, start.theta - half);
  const double hi = std::min(range.hi, start.theta + half);

  if (is_elliptical(family)) {
    BivariateCopula best = start, init = start;
    double best_ll = -std::numeric_limits<double>::infinity(), init_ll = best_ll;
    const std::vector<double> nus =
        family == Family::Gaussian ? std::vector<double>{0.0} : std::vector<double>(kStudentNuGrid.begin(), kStudentNuGrid.end());
    for (double nu : nus) {
      const auto s = detail::elliptical_scores(nu, u, v);
      auto ll_at = [&](double r) {
        const double ll = detail::elliptical_pair_loglik(s, r);
        return std::isfinite(ll) ? ll : -1e300;
      };
      const double ll0 = ll_at(start.theta);
      if (ll0 > init_ll) {
        init_ll = ll0;
        init.nu = nu;
      }
      const double r = golden_section_max(ll_at, lo, hi);
      const double ll = ll_at(r);
      if (ll > best_ll) {
        best_ll = ll;
        best = {family, r, nu};
      }
    }
    return best_ll > init_ll ? best : init;
  }

  auto ll_at = [&](double th) {
    BivariateCopula c = start;
    c.theta = th;
    if (family == Family::Frank && std::abs(th) < detail::kFrankTiny) return 0.0;
    const double ll = pair_loglik(c, u, v);
    return std::isfinite(ll) ? ll : -1e300;
  };
  const double th = golden_section_max(ll_at, lo, hi);
  BivariateCopula best = start;
  if (ll_at(th) > ll_at(start.theta)) best.theta = th;
  if (family == Family::Frank && std::abs(best.theta) < detail::kFrankTiny) return {};
  return best;
}

/// Conditional-inversion sampling: v ~ U, p ~ U, u = h^{-1}(p | v).
/// Column 0 holds u, column 1 holds v.
inline Matrix sample_pair(const BivariateCopula& c, std::size_t n, Rng& rng) {
  c.validate();
  Matrix out(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double v = rng.uniform();
    const double p = rng.uniform();
    out(i, 0) = h_inverse(c, p, v);
    out(i, 1) = v;
  }
  return out;
}

inline Matrix sample_pair(const BivariateCopula& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_pair(c, n, rng);
}

// ---------------------------------------------------------------------------
// 3-D elliptical copulas

struct EllipticalCopula3D {
  Family family = Family::Gaussian;
  Eigen::Matrix3d corr = Eigen::Matrix3d::Identity();
  double nu = 0.0;
};

/// Eigenvalue clipping at `floor`, rescaling to unit diagonal, and a final
/// blend towards the identity if rescaling pushed the spectrum below floor.
inline Eigen::Matrix3d nearest_correlation(const Eigen::Matrix3d& r, double floor = 1e-6) {
  require(r.allFinite(), ErrorCode::Numerical, "correlation matrix is not finite");
  Eigen::Matrix3d a = 0.5 * (r + r.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(a);
  require(es.info() == Eigen::Success, ErrorCode::Numerical, "eigendecomposition failed");
  if (es.eigenvalues().minCoeff() >= floor) {
    a.diagonal().setOnes();
    return a;
  }
  const Eigen::Vector3d lam = es.eigenvalues().cwiseMax(floor);
  a = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::Vector3d inv_sd = a.diagonal().cwiseSqrt().cwiseInverse();
  a = inv_sd.asDiagonal() * a * inv_sd.asDiagonal();
  a = 0.5 * (a + a.transpose());
  a.diagonal().setOnes();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es2(a);
  const double mn = es2.eigenvalues().minCoeff();
  if (mn < floor) {
    const double w = (floor - mn) / (1.0 - mn) * (1.0 + 1e-9);
    a = (1.0 - w) * a + w * Eigen::Matrix3d::Identity();
  }
  Eigen::LLT<Eigen::Matrix3d> llt(a);
  require(llt.info() == Eigen::Success, ErrorCode::Numerical, "positive-definite repair failed");
  return a;
}

inline double elliptical_log_density(const EllipticalCopula3D& c, const Eigen::Vector3d& u) {
  for (int i = 0; i < 3; ++i)
    require(is_interior(u(i)), ErrorCode::Boundary, "copula arguments must lie strictly inside (0,1)");
  const Eigen::LDLT<Eigen::Matrix3d> ldlt(c.corr);
  const double logdet = ldlt.vectorD().array().log().sum();
  if (c.family == Family::Gaussian) {
    Eigen::Vector3d z;
    for (int i = 0; i < 3; ++i) z(i) = special::norm_quantile(u(i));
    const double q = z.dot(ldlt.solve(z));
    return -0.5 * logdet - 0.5 * (q - z.squaredNorm());
  }
  const double nu = c.nu;
  Eigen::Vector3d x;
  double marg = 0.0;
  for (int i = 0; i < 3; ++i) {
    x(i) = special::t_quantile(u(i), nu);
    marg += special::t_logpdf(x(i), nu);
  }
  const double q = x.dot(ldlt.solve(x));
  const double joint = std::lgamma(0.5 * (nu + 3.0)) - std::lgamma(0.5 * nu) -
                       1.5 * std::log(nu * std::numbers::pi) - 0.5 * logdet -
                       0.5 * (nu + 3.0) * std::log1p(q / nu);
  return joint - marg;
}

inline double elliptical_loglik(const EllipticalCopula3D& c, const Matrix& pseudo) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < pseudo.rows(); ++i)
    ll += elliptical_log_density(c, pseudo.row(i).transpose());
  return ll;
}

/// Pairwise sine map of Kendall's tau, PD repair, and (Student-t) profile
/// likelihood for nu over kStudentNuGrid.
inline EllipticalCopula3D fit_elliptical_3d(Family family, const Matrix& pseudo) {
  require(is_elliptical(family), ErrorCode::InvalidArgument, "family is not elliptical");
  require(pseudo.cols() == 3, ErrorCode::InvalidArgument, "elliptical fit expects 3 columns");
  const Matrix tau = kendall_matrix(pseudo);
  require(tau.allFinite(), ErrorCode::Numerical, "Kendall matrix is not finite");
  Eigen::Matrix3d rho = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) rho(i, j) = std::sin(std::numbers::pi * tau(i, j) / 2.0);
  EllipticalCopula3D c{family, nearest_correlation(rho), 0.0};
  if (family == Family::StudentT) {
    double best_nu = kStudentNuGrid.front();
    double best = -std::numeric_limits<double>::infinity();
    for (double nu : kStudentNuGrid) {
      EllipticalCopula3D t{family, c.corr, nu};
      const double ll = elliptical_loglik(t, pseudo);
      if (ll > best) {
        best = ll;
        best_nu = nu;
      }
    }
    c.nu = best_nu;
  }
  return c;
}

inline Matrix sample_elliptical_3d(const EllipticalCopula3D& c, std::size_t n, Rng& rng) {
  Eigen::LLT<Eigen::Matrix3d> llt(c.corr);
  require(llt.info() == Eigen::Success, ErrorCode::Numerical, "Cholesky factorization failed");
  const Eigen::Matrix3d L = llt.matrixL();
  Matrix out(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Vector3d g(rng.normal(), rng.normal(), rng.normal());
    Eigen::Vector3d z = L * g;
    if (c.family == Family::StudentT) {
      z /= std::sqrt(rng.chi_squared(c.nu) / c.nu);
      for (int j = 0; j < 3; ++j) out(i, j) = detail::clamp_open(special::t_cdf(z(j), c.nu));
    } else {
      for (int j = 0; j < 3; ++j) out(i, j) = detail::clamp_open(special::norm_cdf(z(j)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exchangeable 3-D Archimedean copulas (one theta for all pairs)

struct ArchimedeanCopula3D {
  Family family = Family::Clayton;
  double theta = 0.0;
  bool clamped_to_independence = false;  ///< mean tau was outside the family's range
};

/// theta from the mean of the three pairwise taus. Mean tau <= 0 cannot be
/// represented by an exchangeable 3-D Archimedean copula and is clamped to
/// the independence limit (flagged).
inline ArchimedeanCopula3D fit_archimedean_3d(Family family, const Matrix& pseudo) {
  require(is_archimedean(family), ErrorCode::InvalidArgument, "family is not Archimedean");
  require(pseudo.cols() == 3, ErrorCode::InvalidArgument, "Archimedean fit expects 3 columns");
  const Matrix tau = kendall_matrix(pseudo);
  const double mean_tau = (tau(0, 1) + tau(0, 2) + tau(1, 2)) / 3.0;
  require(std::isfinite(mean_tau), ErrorCode::Numerical, "Kendall matrix is not finite");
  ArchimedeanCopula3D c{family, 0.0, false};
  if (mean_tau <= 0.0) {
    c.clamped_to_independence = true;
    c.theta = family == Family::Gumbel ? 1.0 : 0.0;
    return c;
  }
  c.theta = copula_from_tau(family, mean_tau).theta;
  return c;
}

namespace detail {

// Logarithmic series with parameter p (Kemp's LK algorithm).
inline double sample_logarithmic(double p, Rng& rng) {
  const double v = rng.uniform();
  if (v >= p) return 1.0;
  const double q = -std::expm1(std::log1p(-p) * rng.uniform());
  if (v <= q * q) return std::floor(1.0 + std::log(v) / std::log(q));
  return v <= q ? 2.0 : 1.0;
}

// Positive stable with Laplace transform exp(-t^alpha) (Kanter's method).
inline double sample_positive_stable(double alpha, Rng& rng) {
  if (alpha >= 1.0) return 1.0;
  const double theta = std::numbers::pi * rng.uniform();
  const double w = rng.exponential();
  const double a = std::sin(alpha * theta) / std::pow(std::sin(theta), 1.0 / alpha);
  const double b = std::pow(std::sin((1.0 - alpha) * theta) / w, (1.0 - alpha) / alpha);
  return a * b;
}

}  // namespace detail

/// Marshall-Olkin frailty sampling: U_i = psi(E_i / V).
inline Matrix sample_archimedean_3d(const ArchimedeanCopula3D& c, std::size_t n, Rng& rng) {
  Matrix out(static_cast<Eigen::Index>(n), 3);
  const bool indep = c.clamped_to_independence || (c.family == Family::Gumbel && c.theta <= 1.0) ||
                     (c.family != Family::Gumbel && c.theta <= 0.0);
  const double th = c.theta;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (indep) {
      for (int j = 0; j < 3; ++j) out(i, j) = rng.uniform();
      continue;
    }
    double frailty = 1.0;
    switch (c.family) {
      case Family::Clayton: frailty = rng.gamma(1.0 / th); break;
      case Family::Gumbel: frailty = detail::sample_positive_stable(1.0 / th, rng); break;
      case Family::Frank: frailty = detail::sample_logarithmic(-std::expm1(-th), rng); break;
      default: throw Error(ErrorCode::InvalidArgument, "family is not Archimedean");
    }
    for (int j = 0; j < 3; ++j) {
      const double t = rng.exponential() / frailty;
      double u = 0.0;
      switch (c.family) {
        case Family::Clayton: u = std::exp(-std::log1p(t) / th); break;
        case Family::Gumbel: u = std::exp(-std::pow(t, 1.0 / th)); break;
        case Family::Frank: u = -std::log1p(std::expm1(-th) * std::exp(-t)) / th; break;
        default: break;
      }
      out(i, j) = detail::clamp_open(u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const BivariateCopula& c) {
  nlohmann::json j{{"family", to_string(c.family)}, {"theta", c.theta}};
  if (c.family == Family::StudentT) j["nu"] = c.nu;
  return j;
}

inline BivariateCopula bivariate_from_json(const nlohmann::json& j) {
  BivariateCopula c;
  c.family = family_from_string(j.at("family").get<std::string>());
  c.theta = j.value("theta", 0.0);
  c.nu = j.value("nu", 0.0);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const EllipticalCopula3D& c) {
  nlohmann::json corr = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) corr.push_back({c.corr(i, 0), c.corr(i, 1), c.corr(i, 2)});
  nlohmann::json j{{"family", to_string(c.family)}, {"corr", corr}};
  if (c.family == Family::StudentT) j["nu"] = c.nu;
  return j;
}

inline EllipticalCopula3D elliptical_from_json(const nlohmann::json& j) {
  EllipticalCopula3D c;
  c.family = family_from_string(j.at("family").get<std::string>());
  require(is_elliptical(c.family), ErrorCode::Parse, "not an elliptical family");
  const auto& corr = j.at("corr");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.corr(i, k) = corr.at(i).at(k).get<double>();
  c.nu = j.value("nu", 0.0);
  return c;
}

inline nlohmann::json to_json(const ArchimedeanCopula3D& c) {
  return {{"family", to_string(c.family)}, {"theta", c.theta}, {"clamped_to_independence", c.clamped_to_independence}};
}

inline ArchimedeanCopula3D archimedean_from_json(const nlohmann::json& j) {
  ArchimedeanCopula3D c;
  c.family = family_from_string(j.at("family").get<std::string>());
  require(is_archimedean(c.family), ErrorCode::Parse, "not an Archimedean family");
  c.theta = j.at("theta").get<double>();
  c.clamped_to_independence = j.value("clamped_to_independence", false);
  return c;
}

}  // namespace evdep
