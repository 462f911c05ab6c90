#pragma once

// Charging-session ingestion and preprocessing: arrival shift, chronological
// split, evaluation subsample, pseudo-observations, empirical marginals.

#include "evdep/core.hpp"
#include "evdep/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace evdep {

/// Arrival origin; arrivals are measured in hours after this time of day.
inline constexpr double kArrivalOriginHour = 6.0;

struct Session {
  double arrival_shifted = 0.0;  ///< hours after 06:00, in [0,24)
  double duration = 0.0;         ///< hours, > 0
  double energy = 0.0;           ///< kWh, >= 0
  double timestamp = 0.0;        ///< seconds since epoch; ordering only
};

struct Dataset {
  std::string name;
  std::vector<Session> sessions;

  std::size_t size() const { return sessions.size(); }
  bool empty() const { return sessions.empty(); }

  /// n x 3 matrix of (arrival_shifted, duration, energy).
  Matrix features() const {
    Matrix m(static_cast<Eigen::Index>(sessions.size()), kFeatures);
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      m(r, 0) = sessions[i].arrival_shifted;
      m(r, 1) = sessions[i].duration;
      m(r, 2) = sessions[i].energy;
    }
    return m;
  }

  /// Builds an untimed dataset (e.g. synthetic samples) from feature rows.
  static Dataset from_features(const Matrix& m, std::string name = {}) {
    Dataset ds;
    ds.name = std::move(name);
    ds.sessions.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      ds.sessions.push_back({m(r, 0), m(r, 1), m(r, 2), 0.0});
    return ds;
  }
};

inline const char* feature_name(int j) {
  static constexpr const char* names[] = {"arrival_shifted", "duration", "energy"};
  return names[j];
}

/// (hour_of_day - 6) mod 24.
inline double shift_arrival(double hour_of_day) {
  require(hour_of_day >= 0.0 && hour_of_day < 24.0, ErrorCode::InvalidArgument,
          "hour of day must lie in [0,24)");
  double s = hour_of_day - kArrivalOriginHour;
  if (s < 0.0) s += 24.0;
  if (s >= 24.0) s -= 24.0;
  return s;
}

/// Inverse of shift_arrival: clock hour of day for a shifted arrival.
inline double unshift_arrival(double shifted) {
  double h = std::fmod(shifted + kArrivalOriginHour, 24.0);
  if (h < 0.0) h += 24.0;
  return h;
}

struct CsvSchema {
  std::string start = "start";
  std::string duration;  ///< decimal hours or H:MM:SS; used when non-empty
  std::string end;       ///< plug-out timestamp; used when duration is empty
  std::string energy = "energy";
};

struct LoadResult {
  Dataset dataset;
  std::size_t dropped = 0;  ///< rows rejected (unparseable, non-positive duration, negative energy)
};

/// Reads a raw charging log. One Session per valid row, sorted by start time.
inline LoadResult load_csv(const std::string& path, const CsvSchema& schema) {
  const csv::Table t = csv::read_file(path);
  auto col = [&](const std::string& name, const char* role) {
    auto c = t.column(name);
    if (!c)
      throw Error(ErrorCode::Parse,
                  std::string("column '") + name + "' (" + role + ") not found in '" + path + "'");
    return *c;
  };
  const std::size_t c_start = col(schema.start, "start");
  const std::size_t c_energy = col(schema.energy, "energy");
  std::optional<std::size_t> c_dur, c_end;
  if (!schema.duration.empty())
    c_dur = col(schema.duration, "duration");
  else if (!schema.end.empty())
    c_end = col(schema.end, "end");
  else
    throw Error(ErrorCode::InvalidArgument, "schema needs a duration or an end column");

  LoadResult res;
  res.dataset.name = path;
  for (const auto& row : t.rows) {
    auto cell = [&](std::size_t c) -> std::string_view {
      return c < row.size() ? std::string_view(row[c]) : std::string_view();
    };
    auto start = csv::parse_timestamp(cell(c_start));
    auto energy = csv::parse_double(cell(c_energy));
    std::optional<double> duration;
    if (c_dur) {
      duration = csv::parse_duration_hours(cell(*c_dur));
    } else if (auto end = csv::parse_timestamp(cell(*c_end)); end && start) {
      duration = (*end - *start) / 3600.0;
    }
    if (!start || !energy || !duration || *duration <= 0.0 || *energy < 0.0) {
      ++res.dropped;
      continue;
    }
    const double secs_of_day = *start - 86400.0 * std::floor(*start / 86400.0);
    Session s;
    s.arrival_shifted = shift_arrival(std::min(secs_of_day / 3600.0, std::nextafter(24.0, 0.0)));
    s.duration = *duration;
    s.energy = *energy;
    s.timestamp = *start;
    res.dataset.sessions.push_back(s);
  }
  require(!res.dataset.empty(), ErrorCode::Precondition, "no valid rows in '" + path + "'");
  std::stable_sort(res.dataset.sessions.begin(), res.dataset.sessions.end(),
                   [](const Session& a, const Session& b) { return a.timestamp < b.timestamp; });
  return res;
}

/// Writes `arrival_shifted,duration,energy,timestamp`. Untimed datasets leave
/// the timestamp column empty.
inline void write_preprocessed_csv(const Dataset& ds, const std::string& path, bool timed = true) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write '" + path + "'");
  out << "arrival_shifted,duration,energy,timestamp\n";
  for (const auto& s : ds.sessions) {
    out << csv::format_double(s.arrival_shifted) << ',' << csv::format_double(s.duration) << ','
        << csv::format_double(s.energy) << ',';
    if (timed) out << csv::format_timestamp(s.timestamp);
    out << '\n';
  }
  require(out.good(), ErrorCode::Io, "write to '" + path + "' failed");
}

/// Reads a file produced by write_preprocessed_csv.
inline Dataset read_preprocessed_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  std::size_t c[4];
  const char* names[] = {"arrival_shifted", "duration", "energy", "timestamp"};
  for (int i = 0; i < 4; ++i) {
    auto idx = t.column(names[i]);
    require(idx.has_value(), ErrorCode::Parse,
            std::string("column '") + names[i] + "' missing in '" + path + "'");
    c[i] = *idx;
  }
  Dataset ds;
  ds.name = path;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto get = [&](int i) -> std::string_view {
      return c[i] < row.size() ? std::string_view(row[c[i]]) : std::string_view();
    };
    auto a = csv::parse_double(get(0)), d = csv::parse_double(get(1)),
         e = csv::parse_double(get(2));
    if (!a || !d || !e)
      throw Error(ErrorCode::Parse, "bad numeric value on line " + std::to_string(r + 2) +
                                        " of '" + path + "'");
    Session s{*a, *d, *e, 0.0};
    if (auto ts = csv::parse_timestamp(get(3))) s.timestamp = *ts;
    ds.sessions.push_back(s);
  }
  require(!ds.empty(), ErrorCode::Precondition, "no rows in '" + path + "'");
  return ds;
}

struct SplitBundle {
  Dataset train, valid, test;
};

/// 80/10/10 in time order: train = floor(0.8n), valid = floor(0.1n), test = rest.
inline SplitBundle chronological_split(const Dataset& ds) {
  const std::size_t n = ds.size();
  require(n >= 10, ErrorCode::Precondition,
          "dataset too small to split (" + std::to_string(n) + " rows, need 10)");
  require(std::is_sorted(ds.sessions.begin(), ds.sessions.end(),
                         [](const Session& a, const Session& b) { return a.timestamp < b.timestamp; }),
          ErrorCode::Precondition, "dataset is not sorted by timestamp");
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  SplitBundle b;
  auto part = [&](std::size_t lo, std::size_t hi, const char* suffix) {
    Dataset d;
    d.name = ds.name + suffix;
    d.sessions.assign(ds.sessions.begin() + static_cast<std::ptrdiff_t>(lo),
                      ds.sessions.begin() + static_cast<std::ptrdiff_t>(hi));
    return d;
  };
  b.train = part(0, n_train, "/train");
  b.valid = part(n_train, n_train + n_valid, "/valid");
  b.test = part(n_train + n_valid, n, "/test");
  return b;
}

/// Source indices of a uniform sample without replacement, ascending.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t cap,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= cap) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Uniform random subset of at most `cap` rows; original order is kept.
inline Dataset subsample(const Dataset& ds, std::size_t cap, std::uint64_t seed) {
  require(cap > 0, ErrorCode::InvalidArgument, "subsample cap must be positive");
  if (ds.size() <= cap) return ds;
  Dataset out;
  out.name = ds.name;
  for (std::size_t i : subsample_indices(ds.size(), cap, seed)) out.sessions.push_back(ds.sessions[i]);
  return out;
}

/// 1-based average ranks (ties share the mean of their positions).
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Rank-based pseudo-observations rank/(n+1) per column.
inline Matrix pseudo_observations(const Matrix& x) {
  const auto n = x.rows();
  require(n >= 2, ErrorCode::Precondition, "pseudo-observations need at least 2 rows");
  Matrix u(n, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> col(x.col(j).data(), x.col(j).data() + n);
    require(std::any_of(col.begin(), col.end(), [&](double v) { return v != col[0]; }),
            ErrorCode::Degenerate,
            "column " + std::to_string(j) +
                (x.cols() == kFeatures ? std::string(" (") + feature_name(static_cast<int>(j)) + ")" : "") +
                " is constant");
    const auto r = average_ranks(col);
    for (Eigen::Index i = 0; i < n; ++i) u(i, j) = r[static_cast<std::size_t>(i)] / static_cast<double>(n + 1);
  }
  return u;
}

inline Matrix pseudo_observations(const Dataset& ds) { return pseudo_observations(ds.features()); }

/// Empirical CDF and quantile function of one feature, piecewise linear
/// through the points (x_(k), k/(n+1)).
class EmpiricalMarginal {
 public:
  EmpiricalMarginal() = default;

  EmpiricalMarginal(std::vector<double> values, int feature_index)
      : sorted_(std::move(values)), feature_(feature_index) {
    std::sort(sorted_.begin(), sorted_.end());
    require(sorted_.size() >= 2 && sorted_.front() < sorted_.back(), ErrorCode::Degenerate,
            "feature " + std::to_string(feature_index) + " needs at least two distinct values");
  }

  static EmpiricalMarginal fit(const Dataset& ds, int feature) {
    require(feature >= 0 && feature < kFeatures, ErrorCode::InvalidArgument, "feature index out of range");
    const Matrix f = ds.features();
    std::vector<double> v(f.col(feature).data(), f.col(feature).data() + f.rows());
    return EmpiricalMarginal(std::move(v), feature);
  }

  double cdf(double x) const {
    const std::size_t n = sorted_.size();
    const double np1 = static_cast<double>(n + 1);
    if (x < sorted_.front()) return 0.0;
    if (x >= sorted_.back()) return x > sorted_.back() ? 1.0 : static_cast<double>(n) / np1;
    // last k (1-based) with x_(k) <= x; then x_(k) <= x < x_(k+1)
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    const auto k = static_cast<std::size_t>(it - sorted_.begin());
    const double lo = sorted_[k - 1], hi = sorted_[k];
    const double frac = (x - lo) / (hi - lo);
    return (static_cast<double>(k) + frac) / np1;
  }

  double inverse(double u) const {
    const std::size_t n = sorted_.size();
    const double np1 = static_cast<double>(n + 1);
    u = std::clamp(u, 1.0 / np1, static_cast<double>(n) / np1);
    const double pos = u * np1 - 1.0;  // 0-based fractional index in [0, n-1]
    const auto k = std::min(static_cast<std::size_t>(pos), n - 1);
    if (k + 1 >= n) return sorted_[n - 1];
    const double frac = pos - static_cast<double>(k);
    return sorted_[k] + frac * (sorted_[k + 1] - sorted_[k]);
  }

  const std::vector<double>& sorted_values() const { return sorted_; }
  int feature_index() const { return feature_; }

 private:
  std::vector<double> sorted_;
  int feature_ = 0;
};

/// Maps copula samples back to data scale through per-feature quantiles.
inline Dataset from_uniforms(const Matrix& u, const std::vector<EmpiricalMarginal>& marginals,
                             std::string name = {}) {
  require(static_cast<std::size_t>(u.cols()) == marginals.size(), ErrorCode::InvalidArgument,
          "marginal count does not match column count");
  Matrix x(u.rows(), u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j)
    for (Eigen::Index i = 0; i < u.rows(); ++i) x(i, j) = marginals[static_cast<std::size_t>(j)].inverse(u(i, j));
  return Dataset::from_features(x, std::move(name));
}

inline std::vector<EmpiricalMarginal> fit_marginals(const Dataset& ds) {
  std::vector<EmpiricalMarginal> m;
  for (int j = 0; j < kFeatures; ++j) m.push_back(EmpiricalMarginal::fit(ds, j));
  return m;
}

}  // namespace evdep
