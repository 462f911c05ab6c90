#pragma once

// Evaluation suite comparing a synthetic dataset with the real test set:
// KDE negative log-likelihood, Kendall matrix distance, marginal Wasserstein
// distance, nearest-neighbour generalization ratio, empirical tail
// coefficients and average daily load profiles.

#include "evdep/density.hpp"
#include "evdep/kendall.hpp"
#include "evdep/sessions.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace evdep {

inline constexpr int kMinutesPerDay = 1440;

struct MetricsReport {
  std::string model, dataset;
  std::uint64_t seed = 0;
  std::size_t n_train = 0, n_test = 0, n_synthetic = 0;
  double nll = 0.0, tau_diff = 0.0, rho1 = 0.0, rho2 = 0.0, mae_lt = 0.0, mae_ut = 0.0, mae_load = 0.0;
  double alpha = 0.95, epsilon = 1e-8;
  double kde_bandwidth = 0.0;
  double load_span_days = 1.0;
  std::size_t load_skipped = 0;  ///< synthetic sessions with non-positive duration
  std::vector<std::string> warnings;

  bool operator==(const MetricsReport&) const = default;
};

struct MetricsConfig {
  KdeConfig kde{};
  double alpha = 0.95;
  double epsilon = 1e-8;
  std::size_t rho2_train_cap = 20000;  ///< 0 keeps every training row
  unsigned workers = 1;
};

// ---------------------------------------------------------------- NLL

inline double metric_nll(const Dataset& synthetic, const Dataset& test, const KdeConfig& kde, std::uint64_t seed,
                         double* bandwidth = nullptr) {
  require(!synthetic.empty() && !test.empty(), ErrorCode::Precondition, "NLL needs non-empty datasets");
  const KdeModel m = fit_kde_cv(synthetic, kde, seed);
  if (bandwidth) *bandwidth = m.bandwidth;
  return -kde_logpdf(m, test.features(), kde.workers).mean();
}

// ---------------------------------------------------------------- rho1

/// W1 between two samples. Equal sizes use the sorted pairing; otherwise the
/// larger sample is replaced by its quantiles at the smaller size's midpoints.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::Precondition, "Wasserstein distance needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() > b.size()) std::swap(a, b);
  const std::size_t m = a.size(), n = b.size();
  double total = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    double q = b[k];
    if (n != m) {
      const double level = (static_cast<double>(k) + 0.5) / static_cast<double>(m);
      const auto idx = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n))) - 1;
      q = b[std::min(idx, n - 1)];
    }
    total += std::abs(a[k] - q);
  }
  return total / static_cast<double>(m);
}

inline std::array<double, 3> rho1_per_feature(const Dataset& synthetic, const Dataset& test) {
  const Matrix s = synthetic.features(), t = test.features();
  std::array<double, 3> w{};
  for (int j = 0; j < 3; ++j) {
    std::vector<double> a(s.col(j).begin(), s.col(j).end()), b(t.col(j).begin(), t.col(j).end());
    w[static_cast<std::size_t>(j)] = wasserstein1(std::move(a), std::move(b));
  }
  return w;
}

inline double metric_rho1(const Dataset& synthetic, const Dataset& test) {
  require(!synthetic.empty() && !test.empty(), ErrorCode::Precondition, "rho1 needs non-empty datasets");
  const auto w = rho1_per_feature(synthetic, test);
  return (w[0] + w[1] + w[2]) / 3.0;
}

// ---------------------------------------------------------------- tau_diff

inline double metric_tau_diff(const Dataset& synthetic, const Dataset& test) {
  require(synthetic.size() >= 2 && test.size() >= 2, ErrorCode::Precondition, "tau_diff needs two rows per dataset");
  return kendall_distance(synthetic.features(), test.features());
}

// ---------------------------------------------------------------- tails

struct TailCoefficients {
  std::array<double, 3> lower{}, upper{};  ///< pairs (0,1), (0,2), (1,2)
  std::vector<std::string> warnings;
};

inline constexpr std::array<std::array<int, 2>, 3> kPairs{{{0, 1}, {0, 2}, {1, 2}}};

/// Empirical lambda_u = P(U_i > a | U_j > a) and lambda_l = P(U_i < 1-a | U_j < 1-a)
/// on the dataset's own pseudo-observations, for i < j conditioned on j.
inline TailCoefficients tail_coefficients(const Matrix& x, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  const Matrix u = pseudo_observations(x);
  TailCoefficients tc;
  const auto n = static_cast<double>(u.rows());
  if (std::ceil((1.0 - alpha) * n) < 5.0)
    tc.warnings.push_back("fewer than 5 expected points beyond the tail threshold");
  for (std::size_t p = 0; p < kPairs.size(); ++p) {
    const int i = kPairs[p][0], j = kPairs[p][1];
    double up_j = 0, up_both = 0, lo_j = 0, lo_both = 0;
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
      if (u(r, j) > alpha) {
        ++up_j;
        if (u(r, i) > alpha) ++up_both;
      }
      if (u(r, j) < 1.0 - alpha) {
        ++lo_j;
        if (u(r, i) < 1.0 - alpha) ++lo_both;
      }
    }
    const std::string pair = std::string(feature_name(i)) + "|" + feature_name(j);
    if (up_j > 0) tc.upper[p] = up_both / up_j;
    else tc.warnings.push_back("empty upper conditioning event for " + pair);
    if (lo_j > 0) tc.lower[p] = lo_both / lo_j;
    else tc.warnings.push_back("empty lower conditioning event for " + pair);
  }
  return tc;
}

struct TailMae {
  double lower = 0.0, upper = 0.0;
  std::vector<std::string> warnings;
};

inline TailMae metric_tail_mae(const Dataset& synthetic, const Dataset& test, double alpha = 0.95) {
  require(synthetic.size() >= 2 && test.size() >= 2, ErrorCode::Precondition, "tail MAE needs two rows per dataset");
  const auto s = tail_coefficients(synthetic.features(), alpha);
  const auto t = tail_coefficients(test.features(), alpha);
  TailMae r;
  for (std::size_t p = 0; p < 3; ++p) {
    r.lower += std::abs(s.lower[p] - t.lower[p]) / 3.0;
    r.upper += std::abs(s.upper[p] - t.upper[p]) / 3.0;
  }
  for (const auto& w : s.warnings) r.warnings.push_back("synthetic: " + w);
  for (const auto& w : t.warnings) r.warnings.push_back("test: " + w);
  return r;
}

// ---------------------------------------------------------------- rho2

/// Exact Euclidean nearest-neighbour distance from each query row to `ref`.
inline Eigen::VectorXd nearest_distances(const Matrix& queries, const Matrix& ref, unsigned workers = 1) {
  require(ref.rows() >= 1 && queries.cols() == ref.cols(), ErrorCode::InvalidArgument,
          "nearest neighbour: bad reference set");
  Eigen::VectorXd out(queries.rows());
  parallel_for(static_cast<std::size_t>(queries.rows()), workers, [&](std::size_t lo, std::size_t hi) {
    Eigen::ArrayXd d2(ref.rows());
    for (auto q = static_cast<Eigen::Index>(lo); q < static_cast<Eigen::Index>(hi); ++q) {
      d2.setZero();
      for (Eigen::Index j = 0; j < ref.cols(); ++j) d2 += (ref.col(j).array() - queries(q, j)).square();
      out(q) = std::sqrt(d2.minCoeff());
    }
  });
  return out;
}

/// Mean over training rows of d(t, test) / (d(t, synthetic) + eps), in
/// train-standardized coordinates.
inline double metric_rho2(const Dataset& train, const Dataset& test, const Dataset& synthetic, double eps = 1e-8,
                          unsigned workers = 1) {
  require(!train.empty() && !test.empty() && !synthetic.empty(), ErrorCode::Precondition,
          "rho2 needs non-empty datasets");
  const Matrix t = train.features();
  const Standardizer st = Standardizer::fit(t);
  const Matrix zt = st.apply(t);
  const Eigen::VectorXd dv = nearest_distances(zt, st.apply(test.features()), workers);
  const Eigen::VectorXd ds = nearest_distances(zt, st.apply(synthetic.features()), workers);
  return (dv.array() / (ds.array() + eps)).mean();
}

// ---------------------------------------------------------------- load

struct LoadProfile {
  std::vector<double> bins = std::vector<double>(kMinutesPerDay, 0.0);  ///< kW per minute of the day
  double day_count = 1.0;
  std::size_t skipped = 0;  ///< sessions with non-positive or non-finite duration
};

/// Distinct calendar days spanned by the timestamps, first to last inclusive.
inline double observation_span_days(const Dataset& ds) {
  require(!ds.empty(), ErrorCode::Precondition, "observation span of an empty dataset");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : ds.sessions) {
    lo = std::min(lo, s.timestamp);
    hi = std::max(hi, s.timestamp);
  }
  return std::floor(hi / 86400.0) - std::floor(lo / 86400.0) + 1.0;
}

/// Average daily profile assuming constant power energy/duration over each
/// session, with fractional overlap at the first and last minute.
inline LoadProfile build_load_profile(const Dataset& ds, double observation_span) {
  require(observation_span >= 1.0, ErrorCode::InvalidArgument, "observation span must be at least one day");
  LoadProfile lp;
  lp.day_count = observation_span;
  for (const auto& s : ds.sessions) {
    if (!(s.duration > 0.0) || !std::isfinite(s.duration) || !std::isfinite(s.energy) ||
        !std::isfinite(s.arrival_shifted)) {
      ++lp.skipped;
      continue;
    }
    const double power = s.energy / s.duration;
    const double start = unshift_arrival(s.arrival_shifted) * 60.0;
    const double end = start + s.duration * 60.0;
    for (auto minute = static_cast<long long>(std::floor(start)); static_cast<double>(minute) < end; ++minute) {
      const double overlap = std::min(end, static_cast<double>(minute + 1)) - std::max(start, static_cast<double>(minute));
      if (overlap <= 0.0) continue;
      const auto bin = static_cast<std::size_t>(((minute % kMinutesPerDay) + kMinutesPerDay) % kMinutesPerDay);
      lp.bins[bin] += power * overlap;
    }
  }
  for (double& b : lp.bins) b /= observation_span;
  return lp;
}

inline double profile_mae(const LoadProfile& a, const LoadProfile& b) {
  double total = 0.0;
  for (int k = 0; k < kMinutesPerDay; ++k) total += std::abs(a.bins[static_cast<std::size_t>(k)] - b.bins[static_cast<std::size_t>(k)]);
  return total / kMinutesPerDay;
}

/// Both profiles use the test span so their units agree.
inline double metric_mae_load(const Dataset& synthetic, const Dataset& test, double span) {
  return profile_mae(build_load_profile(synthetic, span), build_load_profile(test, span));
}

inline void write_load_profile_csv(const std::string& path, const std::vector<std::pair<std::string, LoadProfile>>& cols) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write '" + path + "'");
  out << "minute";
  for (const auto& c : cols) out << ',' << c.first;
  out << '\n';
  for (int k = 0; k < kMinutesPerDay; ++k) {
    out << k;
    for (const auto& c : cols) out << ',' << csv::format_double(c.second.bins[static_cast<std::size_t>(k)]);
    out << '\n';
  }
  require(out.good(), ErrorCode::Io, "write to '" + path + "' failed");
}

// ---------------------------------------------------------------- suite

inline MetricsReport evaluate_all(const Dataset& train, const Dataset& test, const Dataset& synthetic,
                                  const MetricsConfig& cfg, std::uint64_t seed) {
  MetricsReport r;
  r.seed = seed;
  r.alpha = cfg.alpha;
  r.epsilon = cfg.epsilon;
  r.n_test = test.size();
  r.n_synthetic = synthetic.size();
  KdeConfig kde = cfg.kde;
  kde.workers = cfg.workers;
  r.nll = metric_nll(synthetic, test, kde, mix64(seed ^ 0x4B44Eull), &r.kde_bandwidth);
  r.tau_diff = metric_tau_diff(synthetic, test);
  r.rho1 = metric_rho1(synthetic, test);
  const Dataset t = cfg.rho2_train_cap ? subsample(train, cfg.rho2_train_cap, mix64(seed ^ 0x5232ull)) : train;
  r.n_train = t.size();
  r.rho2 = metric_rho2(t, test, synthetic, cfg.epsilon, cfg.workers);
  const TailMae tm = metric_tail_mae(synthetic, test, cfg.alpha);
  r.mae_lt = tm.lower;
  r.mae_ut = tm.upper;
  r.warnings = tm.warnings;
  r.load_span_days = observation_span_days(test);
  const LoadProfile ps = build_load_profile(synthetic, r.load_span_days);
  r.load_skipped = ps.skipped;
  if (ps.skipped) r.warnings.push_back(std::to_string(ps.skipped) + " synthetic sessions with non-positive duration skipped in load profile");
  r.mae_load = profile_mae(ps, build_load_profile(test, r.load_span_days));
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"model", r.model},
          {"dataset", r.dataset},
          {"seed", r.seed},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"n_synthetic", r.n_synthetic},
          {"nll", r.nll},
          {"tau_diff", r.tau_diff},
          {"rho1", r.rho1},
          {"rho2", r.rho2},
          {"mae_lt", r.mae_lt},
          {"mae_ut", r.mae_ut},
          {"mae_load", r.mae_load},
          {"alpha", r.alpha},
          {"epsilon", r.epsilon},
          {"kde_bandwidth", r.kde_bandwidth},
          {"load_span_days", r.load_span_days},
          {"load_skipped", r.load_skipped},
          {"warnings", r.warnings}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_test = j.at("n_test").get<std::size_t>();
  r.n_synthetic = j.at("n_synthetic").get<std::size_t>();
  r.nll = j.at("nll").get<double>();
  r.tau_diff = j.at("tau_diff").get<double>();
  r.rho1 = j.at("rho1").get<double>();
  r.rho2 = j.at("rho2").get<double>();
  r.mae_lt = j.at("mae_lt").get<double>();
  r.mae_ut = j.at("mae_ut").get<double>();
  r.mae_load = j.at("mae_load").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.kde_bandwidth = j.at("kde_bandwidth").get<double>();
  r.load_span_days = j.at("load_span_days").get<double>();
  r.load_skipped = j.at("load_skipped").get<std::size_t>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

/// The seven ranked columns, all lower-is-better.
inline constexpr std::array<const char*, 7> kMetricColumns{"nll",    "tau_diff", "rho1",    "rho2",
                                                            "mae_lt", "mae_ut",   "mae_load"};

inline double metric_value(const MetricsReport& r, std::size_t column) {
  switch (column) {
    case 0: return r.nll;
    case 1: return r.tau_diff;
    case 2: return r.rho1;
    case 3: return r.rho2;
    case 4: return r.mae_lt;
    case 5: return r.mae_ut;
    case 6: return r.mae_load;
  }
  throw Error(ErrorCode::InvalidArgument, "metric column out of range");
}

}  // namespace evdep
