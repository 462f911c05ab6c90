#pragma once

// Isotropic Gaussian KDE in standardized feature space with a scalar
// bandwidth chosen by k-fold cross-validated held-out log-likelihood.

#include "evdep/sessions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace evdep {

struct KdeModel {
  Matrix points;  ///< standardized, one row per kernel centre
  double bandwidth = 1.0;
  Standardizer standardizer;
};

struct KdeConfig {
  std::vector<double> grid;  ///< empty means default_bandwidth_grid()
  int folds = 5;
  unsigned workers = 1;
};

struct KdeSelection {
  KdeModel model;
  std::vector<double> grid;
  std::vector<double> cv_loglik;  ///< mean held-out log-likelihood per grid value
};

/// `count` log-spaced values from lo to hi inclusive.
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  require(lo > 0.0 && hi >= lo && count >= 1, ErrorCode::InvalidArgument, "invalid log-spaced range");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    g[static_cast<std::size_t>(i)] =
        count == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (count - 1));
  return g;
}

inline std::vector<double> default_bandwidth_grid() { return log_spaced(0.02, 2.0, 20); }

namespace detail {

// For each query row, log Σ_k exp(-|q - p_k|² / 2b²) for every bandwidth,
// stored in out(query, bandwidth). Squared distances are computed once and
// shifted by their minimum so the sum never underflows. `fast` evaluates the
// exponentials in single precision (used for bandwidth selection only).
inline void kernel_log_sums(const Matrix& queries, const Matrix& points, const std::vector<double>& bw,
                            unsigned workers, bool fast, Matrix& out) {
  const auto nq = queries.rows(), np = points.rows(), d = points.cols();
  const auto nb = static_cast<Eigen::Index>(bw.size());
  out.resize(nq, nb);
  Eigen::ArrayXd inv2(nb);
  for (Eigen::Index b = 0; b < nb; ++b) inv2(b) = 0.5 / (bw[static_cast<std::size_t>(b)] * bw[static_cast<std::size_t>(b)]);
  parallel_for(static_cast<std::size_t>(nq), workers, [&](std::size_t lo, std::size_t hi) {
    Eigen::ArrayXd d2(np), e(np);
    Eigen::ArrayXf sf(np), ef(np);
    for (auto q = static_cast<Eigen::Index>(lo); q < static_cast<Eigen::Index>(hi); ++q) {
      d2.setZero();
      for (Eigen::Index j = 0; j < d; ++j) d2 += (points.col(j).array() - queries(q, j)).square();
      const double dmin = d2.minCoeff();
      d2 -= dmin;
      if (fast) sf = d2.cast<float>();
      for (Eigen::Index b = 0; b < nb; ++b) {
        double total;
        if (fast) {
          ef = (static_cast<float>(-inv2(b)) * sf).exp();
          total = static_cast<double>(ef.sum());
        } else {
          e = (-inv2(b) * d2).exp();
          total = e.sum();
        }
        out(q, b) = -inv2(b) * dmin + std::log(total);
      }
    }
  });
}

inline double kernel_log_norm(double bandwidth, Eigen::Index d, Eigen::Index m) {
  return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * bandwidth * bandwidth) -
         std::log(static_cast<double>(m));
}

}  // namespace detail

/// Bandwidth by cross-validation over a seeded fold assignment; ties keep the
/// smaller bandwidth.
inline KdeSelection fit_kde_cv_detailed(const Matrix& samples, const KdeConfig& cfg, std::uint64_t seed) {
  require(samples.rows() >= 10, ErrorCode::Precondition, "KDE needs at least 10 samples");
  require(cfg.folds >= 2 && cfg.folds <= samples.rows(), ErrorCode::InvalidArgument, "invalid fold count");
  std::vector<double> grid = cfg.grid.empty() ? default_bandwidth_grid() : cfg.grid;
  for (double b : grid) require(b > 0.0 && std::isfinite(b), ErrorCode::InvalidArgument, "bandwidths must be positive");
  std::sort(grid.begin(), grid.end());

  KdeSelection sel;
  sel.model.standardizer = Standardizer::fit(samples);
  sel.model.points = sel.model.standardizer.apply(samples);
  const Matrix& z = sel.model.points;
  const auto n = static_cast<std::size_t>(z.rows());
  const auto d = z.cols();

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<int> fold(n);
  for (std::size_t r = 0; r < n; ++r) fold[perm[r]] = static_cast<int>(r % static_cast<std::size_t>(cfg.folds));

  std::vector<double> total(grid.size(), 0.0);
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<Eigen::Index> held, kept;
    for (std::size_t r = 0; r < n; ++r) (fold[r] == f ? held : kept).push_back(static_cast<Eigen::Index>(r));
    const Matrix q = z(held, Eigen::all), p = z(kept, Eigen::all);
    Matrix sums;
    detail::kernel_log_sums(q, p, grid, cfg.workers, true, sums);
    for (std::size_t b = 0; b < grid.size(); ++b)
      total[b] += sums.col(static_cast<Eigen::Index>(b)).sum() +
                  static_cast<double>(held.size()) * detail::kernel_log_norm(grid[b], d, p.rows());
  }
  sel.grid = grid;
  sel.cv_loglik.resize(grid.size());
  double best = -std::numeric_limits<double>::infinity();
  std::size_t arg = grid.size();
  for (std::size_t b = 0; b < grid.size(); ++b) {
    sel.cv_loglik[b] = total[b] / static_cast<double>(n);
    if (std::isfinite(sel.cv_loglik[b]) && sel.cv_loglik[b] > best) {
      best = sel.cv_loglik[b];
      arg = b;
    }
  }
  require(arg < grid.size(), ErrorCode::Numerical, "KDE: every bandwidth gives -inf held-out likelihood");
  sel.model.bandwidth = grid[arg];
  return sel;
}

inline KdeModel fit_kde_cv(const Dataset& samples, const KdeConfig& cfg, std::uint64_t seed) {
  return fit_kde_cv_detailed(samples.features(), cfg, seed).model;
}

inline KdeModel fit_kde_cv(const Matrix& samples, const KdeConfig& cfg, std::uint64_t seed) {
  return fit_kde_cv_detailed(samples, cfg, seed).model;
}

/// Log-density for each row of `x` (raw feature scale).
inline Eigen::VectorXd kde_logpdf(const KdeModel& m, const Matrix& x, unsigned workers = 1) {
  require(m.points.rows() >= 1 && m.bandwidth > 0.0, ErrorCode::Precondition, "KDE model is not fitted");
  require(x.cols() == m.points.cols(), ErrorCode::InvalidArgument, "KDE query dimension mismatch");
  Matrix sums;
  detail::kernel_log_sums(m.standardizer.apply(x), m.points, {m.bandwidth}, workers, false, sums);
  return sums.col(0).array() + detail::kernel_log_norm(m.bandwidth, m.points.cols(), m.points.rows()) -
         m.standardizer.log_jacobian();
}

inline double kde_logpdf(const KdeModel& m, const Eigen::RowVectorXd& x) {
  return kde_logpdf(m, Matrix(x), 1)(0);
}

}  // namespace evdep
