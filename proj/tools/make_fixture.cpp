// Writes the 5000-session test fixture drawn from a fixed Clayton vine.
//
//   make_fixture OUT.csv [rows] [seed]
//
// Vine on (arrival, duration, energy) with duration at the center:
//   C(arrival, duration)          Clayton tau 0.5
//   C(energy, duration)           Clayton tau 0.6
//   C(arrival, energy | duration) Clayton tau 0.05
// Marginals: arrival spread over the day after 06:00, log-normal duration,
// Weibull-like energy. Twenty sessions per calendar day from 2023-01-02.

#include "evdep/sessions.hpp"
#include "evdep/special.hpp"
#include "evdep/vine.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

using namespace evdep;

VineModel fixture_vine() {
  return VineModel::make(1, copula_from_tau(Family::Clayton, 0.5), copula_from_tau(Family::Clayton, 0.6),
                         copula_from_tau(Family::Clayton, 0.05));
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_fixture OUT.csv [rows] [seed]\n";
    return 2;
  }
  const std::size_t rows = argc > 2 ? std::stoul(argv[2]) : 5000;
  const std::uint64_t seed = argc > 3 ? std::stoull(argv[3]) : 2023;
  const Matrix u = vine_sample(fixture_vine(), rows, seed);
  const double day0 = 86400.0 * static_cast<double>(csv::days_from_civil(2023, 1, 2));

  std::ofstream out(argv[1]);
  out << "start,duration,energy\n";
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double shifted = 23.99 * std::pow(u(i, 0), 1.4);
    const double duration = std::exp(1.1 + 0.6 * special::norm_quantile(u(i, 1)));
    const double energy = 2.0 + 18.0 * std::pow(-std::log1p(-u(i, 2)), 0.8);
    const double clock = unshift_arrival(shifted);
    const auto day = static_cast<double>(i / 20);
    // sessions arriving before 06:00 belong to the next calendar day
    const double start = day0 + 86400.0 * (day + (clock < kArrivalOriginHour ? 1.0 : 0.0)) + std::round(clock * 3600.0);
    char line[128];
    std::snprintf(line, sizeof line, "%s,%.4f,%.3f\n", csv::format_timestamp(start).c_str(), duration, energy);
    out << line;
  }
  return out.good() ? 0 : 1;
}
