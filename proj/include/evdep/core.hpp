#pragma once

// Shared vocabulary for the evdep headers: matrix aliases, the error type,
// a portable seeded generator and seed derivation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace evdep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Number of event features handled throughout (arrival, duration, energy).
inline constexpr int kFeatures = 3;

enum class ErrorCode {
  InvalidArgument,
  Io,
  Parse,
  Degenerate,
  UnsupportedDependence,
  Boundary,
  Numerical,
  NotConverged,
  Precondition,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::UnsupportedDependence: return "unsupported_dependence";
    case ErrorCode::Boundary: return "boundary";
    case ErrorCode::Numerical: return "numerical";
    case ErrorCode::NotConverged: return "not_converged";
    case ErrorCode::Precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

/// splitmix64 finalizer; also used to expand seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Cell seed from a global seed and labels; adding a label elsewhere
/// never changes the value for an existing combination.
inline std::uint64_t derive_seed(std::uint64_t global, std::string_view a,
                                 std::string_view b = {}) {
  std::uint64_t h = mix64(global);
  h = mix64(h ^ hash_string(a));
  h = mix64(h ^ hash_string(b));
  return h;
}

/// xoshiro256** with hand-written variate generation so that streams are
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) {
      x = mix64(x);
      s = x;
    }
    have_spare_ = false;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection.
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        m = static_cast<unsigned __int128>(next()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal (Marsaglia polar method).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double x, y, r;
    do {
      x = 2.0 * uniform() - 1.0;
      y = 2.0 * uniform() - 1.0;
      r = x * x + y * y;
    } while (r >= 1.0 || r == 0.0);
    const double f = std::sqrt(-2.0 * std::log(r) / r);
    spare_ = y * f;
    have_spare_ = true;
    return x * f;
  }

  double exponential() { return -std::log(uniform()); }

  /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 via the boost trick.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4]{};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Runs body(begin, end) over [0, n) split into contiguous chunks on up to
/// `workers` threads. Results must not depend on the split.
template <class Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t chunks = std::min<std::size_t>(workers, n);
  if (chunks <= 1) {
    if (n) body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t step = (n + chunks - 1) / chunks;
  for (std::size_t lo = 0; lo < n; lo += step) pool.emplace_back([&body, lo, hi = std::min(n, lo + step)] { body(lo, hi); });
  for (auto& t : pool) t.join();
}

inline bool is_interior(double u) { return u > 0.0 && u < 1.0; }

/// Per-column z-score transform.
struct Standardizer {
  Eigen::RowVectorXd mean, sd;

  static Standardizer fit(const Matrix& x) {
    require(x.rows() >= 2, ErrorCode::Precondition, "standardization needs at least 2 rows");
    Standardizer s;
    s.mean = x.colwise().mean();
    const Matrix c = x.rowwise() - s.mean;
    s.sd = (c.array().square().colwise().sum() / static_cast<double>(x.rows() - 1)).sqrt();
    for (Eigen::Index j = 0; j < s.sd.size(); ++j)
      require(s.sd(j) > 0.0 && std::isfinite(s.sd(j)), ErrorCode::Degenerate,
              "column " + std::to_string(j) + " has zero variance");
    return s;
  }

  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean).array().rowwise() / sd.array();
  }

  Matrix invert(const Matrix& z) const {
    Matrix x = z.array().rowwise() * sd.array();
    x.rowwise() += mean;
    return x;
  }

  double log_jacobian() const { return sd.array().log().sum(); }
};

}  // namespace evdep
