#pragma once

// Kendall's tau-b (tie corrected) in O(n log n) via Knight's merge-sort
// algorithm, plus the quadratic reference and the pairwise matrix.

#include "evdep/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace evdep {

namespace detail {

inline std::uint64_t tie_pairs(std::span<const double> sorted_vals) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i < sorted_vals.size(); ++i) {
    if (sorted_vals[i] == sorted_vals[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

// Merge sort on y counting inversions (swaps).
inline std::uint64_t merge_count(std::vector<double>& y, std::vector<double>& buf, std::size_t lo,
                                 std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(y, buf, lo, mid) + merge_count(y, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += mid - i;
      buf[k++] = y[j++];
    } else {
      buf[k++] = y[i++];
    }
  }
  while (i < mid) buf[k++] = y[i++];
  while (j < hi) buf[k++] = y[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

inline void check_tau_input(std::size_t nx, std::size_t ny) {
  require(nx == ny, ErrorCode::InvalidArgument, "kendall_tau: length mismatch");
  require(nx >= 2, ErrorCode::InvalidArgument, "kendall_tau: need at least 2 observations");
}

}  // namespace detail

inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  detail::check_tau_input(x.size(), y.size());
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = detail::tie_pairs(xs);
  // pairs tied in both coordinates
  std::uint64_t n3 = 0, run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (xs[i] == xs[i - 1] && ys[i] == ys[i - 1]) {
      ++run;
    } else {
      n3 += run * (run - 1) / 2;
      run = 1;
    }
  }
  n3 += run * (run - 1) / 2;
  std::vector<double> buf(n);
  const std::uint64_t swaps = detail::merge_count(ys, buf, 0, n);
  const std::uint64_t n2 = detail::tie_pairs(ys);
  const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  require(denom > 0.0, ErrorCode::Degenerate, "kendall_tau: input is entirely tied");
  const double s = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                   static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
  return std::clamp(s / denom, -1.0, 1.0);
}

/// O(n^2) tau-b, kept as the reference for the fast path.
inline double kendall_tau_naive(std::span<const double> x, std::span<const double> y) {
  detail::check_tau_input(x.size(), y.size());
  const std::size_t n = x.size();
  double concordant_minus_discordant = 0.0, tx = 0.0, ty = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      pairs += 1.0;
      if (dx == 0.0) tx += 1.0;
      if (dy == 0.0) ty += 1.0;
      if (dx * dy > 0) concordant_minus_discordant += 1.0;
      else if (dx * dy < 0) concordant_minus_discordant -= 1.0;
    }
  const double denom = std::sqrt((pairs - tx) * (pairs - ty));
  require(denom > 0.0, ErrorCode::Degenerate, "kendall_tau: input is entirely tied");
  return concordant_minus_discordant / denom;
}

inline double kendall_tau(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return kendall_tau(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                     std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

/// Symmetric d x d matrix of pairwise tau with unit diagonal.
inline Matrix kendall_matrix(const Matrix& data) {
  const auto d = data.cols();
  Matrix t = Matrix::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const Eigen::VectorXd a = data.col(i), b = data.col(j);
      t(i, j) = t(j, i) = kendall_tau(a, b);
    }
  return t;
}

/// Frobenius norm of the difference of the two datasets' Kendall matrices.
inline double kendall_distance(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::InvalidArgument, "kendall_distance: column count mismatch");
  return (kendall_matrix(a) - kendall_matrix(b)).norm();
}

}  // namespace evdep
