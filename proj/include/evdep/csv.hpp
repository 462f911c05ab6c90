#pragma once

// Minimal CSV reading/writing and ISO-8601 timestamp handling.

#include "evdep/core.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evdep::csv {

/// Splits one CSV record. Double quotes delimit fields; "" is an escaped quote.
inline std::vector<std::string> split_record(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == sep) {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  return std::string(s.substr(b, e - b));
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "'" + path + "' has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto& h : split_record(line)) t.header.push_back(trim(h));
  if (t.header.empty() || (t.header.size() == 1 && t.header[0].empty()))
    throw Error(ErrorCode::Parse, "'" + path + "' has an empty header row");
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(split_record(line));
  }
  return t;
}

inline std::optional<double> parse_double(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Seconds since 1970-01-01 for a proleptic Gregorian civil date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilTime {
  std::int64_t year;
  unsigned month, day, hour, minute;
  double second;
};

inline CivilTime civil_from_seconds(double t) {
  const auto days = static_cast<std::int64_t>(std::floor(t / 86400.0));
  double rem = t - static_cast<double>(days) * 86400.0;
  std::int64_t z = days + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2);
  const auto h = static_cast<unsigned>(rem / 3600.0);
  rem -= h * 3600.0;
  const auto mi = static_cast<unsigned>(rem / 60.0);
  rem -= mi * 60.0;
  return {y, m, d, h, mi, rem};
}

/// Parses "YYYY-MM-DD", "YYYY-MM-DD HH:MM", "YYYY-MM-DDTHH:MM:SS(.fff)".
/// A trailing 'Z' or UTC offset is accepted and ignored: the wall-clock time
/// as written is what the arrival hour is taken from.
inline std::optional<double> parse_timestamp(std::string_view raw) {
  const std::string s = trim(raw);
  auto digits = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    out = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      out = out * 10 + (s[i] - '0');
    }
    return true;
  };
  int y, mo, d;
  if (!digits(0, 4, y) || s.size() < 10 || s[4] != '-' || !digits(5, 2, mo) || s[7] != '-' ||
      !digits(8, 2, d))
    return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
  int hh = 0, mm = 0;
  double ss = 0.0;
  std::size_t pos = 10;
  if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
    if (!digits(pos + 1, 2, hh) || pos + 3 >= s.size() || s[pos + 3] != ':' ||
        !digits(pos + 4, 2, mm))
      return std::nullopt;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      std::size_t e = pos + 1;
      while (e < s.size() && ((s[e] >= '0' && s[e] <= '9') || s[e] == '.')) ++e;
      auto sec = parse_double(std::string_view(s).substr(pos + 1, e - pos - 1));
      if (!sec) return std::nullopt;
      ss = *sec;
      pos = e;
    }
    if (hh > 23 || mm > 59 || ss >= 61.0) return std::nullopt;
  }
  if (pos < s.size()) {
    const char c = s[pos];
    if (c != 'Z' && c != '+' && c != '-') return std::nullopt;
  }
  const auto days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return static_cast<double>(days) * 86400.0 + hh * 3600.0 + mm * 60.0 + ss;
}

inline std::string format_timestamp(double t) {
  const CivilTime c = civil_from_seconds(t);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02u:%02u:%02u",
                static_cast<long long>(c.year), c.month, c.day, c.hour, c.minute,
                static_cast<unsigned>(c.second + 1e-6));
  return buf;
}

/// Duration as decimal hours, or "H:MM[:SS]".
inline std::optional<double> parse_duration_hours(std::string_view raw) {
  const std::string s = trim(raw);
  if (s.find(':') == std::string::npos) return parse_double(s);
  auto parts = split_record(s, ':');
  if (parts.size() < 2 || parts.size() > 3) return std::nullopt;
  double total = 0.0, scale = 1.0;
  for (auto& p : parts) {
    auto v = parse_double(p);
    if (!v || *v < 0) return std::nullopt;
    total += *v * scale;
    scale /= 60.0;
  }
  return total;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace evdep::csv
