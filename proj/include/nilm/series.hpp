#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nilm/errors.hpp"

// Power time series: ingestion from timestamped CSV and resampling onto the
// 6-second working grid.
//
// Gap policy (shared with sampling and activation extraction): buckets that
// receive no reading are gaps; interior gap runs of at most 180 s are filled
// by linear interpolation and stop being gaps; longer runs stay marked, make
// overlapping windows ineligible for sampling, and read as 0 W during
// activation extraction.

namespace nilm {

constexpr double kGridPeriodSeconds = 6.0;
constexpr double kMaxInterpolatedGapSeconds = 180.0;

struct PowerSeries {
  std::int64_t start_time = 0;  // epoch seconds of sample 0
  double period = kGridPeriodSeconds;
  std::vector<double> values;      // watts; gap positions hold 0
  std::vector<std::uint8_t> gaps;  // 1 = no reading at this position

  std::size_t size() const { return values.size(); }

  bool has_gaps() const {
    return std::find(gaps.begin(), gaps.end(), std::uint8_t{1}) != gaps.end();
  }
};

struct CsvColumnSpec {
  int time_column = 0;
  int power_column = 1;
  bool has_header = false;
  char delimiter = ',';
  // 0 = infer from the data (mode of consecutive timestamp deltas)
  double period_override = 0.0;
};

namespace detail {

inline double parse_field(const std::string& field, const std::string& path,
                          std::size_t line_no, const char* what) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' ||
                         end[-1] == '\r')) {
    --end;
  }
  double out = 0;
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end || begin == end) {
    throw DataError(path + ":" + std::to_string(line_no) + ": cannot parse " +
                    std::string(what) + " from \"" + field + "\"");
  }
  if (!std::isfinite(out)) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " +
                    std::string(what) + " is not finite");
  }
  return out;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace detail

// Reads a (timestamp, watts) CSV into a series on the source's own cadence.
// Timestamps must be non-decreasing; rows repeating a timestamp overwrite the
// earlier reading (last wins).  Slots the inferred grid does not cover are
// marked as gaps.
inline PowerSeries ingest_csv(const std::string& path,
                              const CsvColumnSpec& spec = {}) {
  if (spec.time_column < 0 || spec.power_column < 0 ||
      spec.time_column == spec.power_column) {
    throw ConfigError(path + ": time/power column spec is invalid");
  }
  if (spec.period_override < 0) {
    throw ConfigError(path + ": period override must be positive (or 0)");
  }
  std::ifstream is(path);
  if (!is) throw IoError(path + ": cannot open for reading");

  std::vector<std::pair<double, double>> rows;  // (timestamp, watts)
  std::string line;
  std::size_t line_no = 0;
  const std::size_t need =
      static_cast<std::size_t>(std::max(spec.time_column, spec.power_column)) +
      1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 && spec.has_header) continue;
    // tolerate blank lines (trailing newline etc.)
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t next = line.find(spec.delimiter, pos);
      fields.push_back(line.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (fields.size() < need) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected at "
                      "least " + std::to_string(need) + " columns, got " +
                      std::to_string(fields.size()));
    }
    const double t = detail::parse_field(fields[spec.time_column], path,
                                         line_no, "timestamp");
    const double w = detail::parse_field(fields[spec.power_column], path,
                                         line_no, "power");
    if (!rows.empty() && t < rows.back().first) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": timestamps must be non-decreasing (got " +
                      std::to_string(t) + " after " +
                      std::to_string(rows.back().first) + ")");
    }
    if (!rows.empty() && t == rows.back().first) {
      rows.back().second = w;  // duplicate timestamp: last reading wins
    } else {
      rows.emplace_back(t, w);
    }
  }
  if (rows.empty()) {
    throw DataError(path + ": no data rows");
  }

  double period = spec.period_override;
  if (period == 0.0) {
    if (rows.size() == 1) {
      period = kGridPeriodSeconds;
    } else {
      // mode of consecutive deltas; ties resolve to the smaller delta
      std::map<double, std::size_t> histogram;
      for (std::size_t i = 1; i < rows.size(); ++i) {
        ++histogram[rows[i].first - rows[i - 1].first];
      }
      period = 0;
      std::size_t best = 0;
      for (const auto& [delta, count] : histogram) {
        if (count > best && delta > 0) {
          best = count;
          period = delta;
        }
      }
      if (period <= 0) {
        throw DataError(path + ": cannot infer a positive sample period");
      }
    }
  }

  PowerSeries out;
  out.start_time = static_cast<std::int64_t>(std::llround(rows[0].first));
  out.period = period;
  const double start = rows[0].first;
  const std::size_t n = static_cast<std::size_t>(std::llround(
                            (rows.back().first - start) / period)) +
                        1;
  out.values.assign(n, 0.0);
  out.gaps.assign(n, 1);
  for (const auto& [t, w] : rows) {
    const auto idx = std::llround((t - start) / period);
    if (idx < 0 || static_cast<std::size_t>(idx) >= n) continue;
    out.values[static_cast<std::size_t>(idx)] = w;
    out.gaps[static_cast<std::size_t>(idx)] = 0;
  }
  return out;
}

// Resamples onto the shared 6 s grid by per-bucket means.  Bucket boundaries
// sit at multiples of 6 s in absolute time so any two resampled series align
// by construction.  Source periods longer than the grid are refused
// (upsampling would fabricate readings).
inline PowerSeries resample_to_grid(const PowerSeries& s) {
  if (s.values.empty()) throw DataError("resample: series is empty");
  if (s.period > kGridPeriodSeconds + 1e-9) {
    throw DataError("resample: source period " + std::to_string(s.period) +
                    " s is coarser than the " +
                    std::to_string(kGridPeriodSeconds) +
                    " s grid; refusing to upsample");
  }
  const std::int64_t grid =
      static_cast<std::int64_t>(kGridPeriodSeconds);
  const std::int64_t out_start =
      detail::floor_div(s.start_time, grid) * grid;

  // accumulate bucket sums
  std::vector<double> sums;
  std::vector<std::uint32_t> counts;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (s.gaps[i]) continue;
    const double t =
        static_cast<double>(s.start_time) + static_cast<double>(i) * s.period;
    const auto b = static_cast<std::size_t>(std::floor(
        (t - static_cast<double>(out_start)) / kGridPeriodSeconds));
    if (b >= sums.size()) {
      sums.resize(b + 1, 0.0);
      counts.resize(b + 1, 0);
    }
    sums[b] += s.values[i];
    counts[b] += 1;
  }
  if (sums.empty()) throw DataError("resample: series is all gaps");

  PowerSeries out;
  out.start_time = out_start;
  out.period = kGridPeriodSeconds;
  out.values.assign(sums.size(), 0.0);
  out.gaps.assign(sums.size(), 0);
  for (std::size_t b = 0; b < sums.size(); ++b) {
    if (counts[b] == 0) {
      out.gaps[b] = 1;
    } else {
      out.values[b] = sums[b] / counts[b];
    }
  }

  // interior gap runs of <= 180 s are linearly interpolated
  const auto max_fill = static_cast<std::size_t>(
      kMaxInterpolatedGapSeconds / kGridPeriodSeconds);
  std::size_t i = 0;
  const std::size_t n = out.values.size();
  while (i < n) {
    if (!out.gaps[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && out.gaps[j]) ++j;
    const bool interior = i > 0 && j < n;
    if (interior && j - i <= max_fill) {
      const double v0 = out.values[i - 1];
      const double v1 = out.values[j];
      const double denom = static_cast<double>(j - i + 1);
      for (std::size_t k = i; k < j; ++k) {
        out.values[k] =
            v0 + (v1 - v0) * static_cast<double>(k - i + 1) / denom;
        out.gaps[k] = 0;
      }
    }
    i = j;
  }
  return out;
}

// Writes a series as "timestamp,watts" rows (gap positions are omitted).
inline void write_series_csv(const std::string& path, const PowerSeries& s) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os << std::setprecision(12);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (s.gaps[i]) continue;
    const double t =
        static_cast<double>(s.start_time) + static_cast<double>(i) * s.period;
    os << static_cast<std::int64_t>(std::llround(t)) << ',' << s.values[i]
       << '\n';
  }
  if (!os) throw IoError(path + ": write failed");
}

}  // namespace nilm
