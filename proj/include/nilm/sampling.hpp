#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nilm/activations.hpp"
#include "nilm/errors.hpp"
#include "nilm/rng.hpp"
#include "nilm/series.hpp"

// Window sampling: turns an aligned (aggregate, appliance) series pair plus
// extracted activations into fixed-length training/evaluation pairs.
//
//  * positive windows place the window uniformly at random among all in-bounds,
//    gap-free offsets that fully contain the activation;
//  * negative windows take the fixed slice ending where the activation starts
//    (one window-length earlier), keeping whatever the appliance meter reads
//    there as the target;
//  * both series of a pair are then scaled into [0, 1] by the aggregate
//    window maximum, remembering the scale in watts.

namespace nilm {

// Two series on the shared 6 s grid, cropped to their common time range.
// `gaps` is the union of both sources' gap masks; `gap_prefix[i]` counts gap
// samples in [0, i) so window checks are O(1).
struct AlignedPair {
  std::int64_t start_time = 0;
  std::vector<double> aggregate;  // watts
  std::vector<double> appliance;  // watts
  std::vector<std::uint8_t> gaps;
  std::vector<std::uint32_t> gap_prefix;

  std::size_t size() const { return aggregate.size(); }

  bool window_clear(std::size_t begin, std::size_t end) const {
    return gap_prefix[end] == gap_prefix[begin];
  }

  void rebuild_gap_prefix() {
    gap_prefix.assign(gaps.size() + 1, 0);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      gap_prefix[i + 1] = gap_prefix[i] + (gaps[i] ? 1u : 0u);
    }
  }

  // View of the appliance channel as a series (for activation extraction).
  PowerSeries appliance_series() const {
    PowerSeries s;
    s.start_time = start_time;
    s.period = kGridPeriodSeconds;
    s.values = appliance;
    s.gaps = gaps;
    return s;
  }
};

// Crops two grid-aligned series to their overlapping range.  Both must
// already be on the 6 s grid (bucket boundaries at multiples of 6 s), which
// resample_to_grid guarantees.
inline AlignedPair align_series(const PowerSeries& aggregate,
                                const PowerSeries& appliance) {
  if (aggregate.period != kGridPeriodSeconds ||
      appliance.period != kGridPeriodSeconds) {
    throw DataError("align: both series must be on the 6 s grid first");
  }
  const std::int64_t grid = static_cast<std::int64_t>(kGridPeriodSeconds);
  if (aggregate.start_time % grid != 0 || appliance.start_time % grid != 0) {
    throw DataError("align: series are not anchored to the shared grid");
  }
  const std::int64_t a_end =
      aggregate.start_time + grid * static_cast<std::int64_t>(aggregate.size());
  const std::int64_t b_end =
      appliance.start_time + grid * static_cast<std::int64_t>(appliance.size());
  const std::int64_t begin =
      std::max(aggregate.start_time, appliance.start_time);
  const std::int64_t end = std::min(a_end, b_end);
  if (end <= begin) {
    throw DataError("align: the series do not overlap in time");
  }
  const auto a_off = static_cast<std::size_t>((begin - aggregate.start_time) /
                                              grid);
  const auto b_off = static_cast<std::size_t>((begin - appliance.start_time) /
                                              grid);
  const auto n = static_cast<std::size_t>((end - begin) / grid);

  AlignedPair out;
  out.start_time = begin;
  out.aggregate.assign(aggregate.values.begin() + a_off,
                       aggregate.values.begin() + a_off + n);
  out.appliance.assign(appliance.values.begin() + b_off,
                       appliance.values.begin() + b_off + n);
  out.gaps.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.gaps[i] = aggregate.gaps[a_off + i] | appliance.gaps[b_off + i];
  }
  out.rebuild_gap_prefix();
  return out;
}

// A raw (unnormalized) window slice; begin is the offset into the pair.
struct WindowSlice {
  std::size_t begin = 0;
  std::vector<double> aggregate;  // watts
  std::vector<double> appliance;  // watts
};

// Places the window uniformly at random among all legal offsets fully
// containing [act.begin, act.end).  Returns nothing when no legal placement
// exists (activation longer than the window, too close to the series edge
// with no room, or every candidate overlaps a gap).
inline std::optional<WindowSlice> sample_positive(const AlignedPair& pair,
                                                  const Activation& act,
                                                  std::size_t window_length,
                                                  Rng& rng) {
  const std::size_t n = pair.size();
  if (window_length == 0 || window_length > n) return std::nullopt;
  if (act.length() > window_length) return std::nullopt;
  const std::size_t lo =
      act.end >= window_length ? act.end - window_length : 0;
  const std::size_t hi = std::min(act.begin, n - window_length);  // inclusive
  if (hi < lo) return std::nullopt;
  std::vector<std::size_t> legal;
  legal.reserve(hi - lo + 1);
  for (std::size_t s = lo; s <= hi; ++s) {
    if (pair.window_clear(s, s + window_length)) legal.push_back(s);
  }
  if (legal.empty()) return std::nullopt;
  const std::size_t s = legal[static_cast<std::size_t>(
      rng.below(static_cast<std::uint64_t>(legal.size())))];
  WindowSlice out;
  out.begin = s;
  out.aggregate.assign(pair.aggregate.begin() + s,
                       pair.aggregate.begin() + s + window_length);
  out.appliance.assign(pair.appliance.begin() + s,
                       pair.appliance.begin() + s + window_length);
  return out;
}

// Takes the fixed window that ends where the activation begins.  The target
// is whatever the appliance meter reads there (usually near zero).
inline std::optional<WindowSlice> sample_negative(const AlignedPair& pair,
                                                  const Activation& act,
                                                  std::size_t window_length) {
  if (window_length == 0 || act.begin < window_length) return std::nullopt;
  const std::size_t s = act.begin - window_length;
  if (!pair.window_clear(s, act.begin)) return std::nullopt;
  WindowSlice out;
  out.begin = s;
  out.aggregate.assign(pair.aggregate.begin() + s,
                       pair.aggregate.begin() + s + window_length);
  out.appliance.assign(pair.appliance.begin() + s,
                       pair.appliance.begin() + s + window_length);
  return out;
}

// ---------------------------------------------------------------------------

enum class SampleRole : std::uint8_t { train = 0, test = 1 };
enum class SampleKind : std::uint8_t { positive = 0, negative = 1 };

// A normalized training/evaluation pair.  Values live in [0, 1]; multiplying
// by scale_watts restores watts.
struct SamplePair {
  std::vector<double> aggregate;
  std::vector<double> appliance;
  double scale_watts = 0;
  SampleRole role = SampleRole::train;
  SampleKind kind = SampleKind::positive;
  std::uint32_t clamped_targets = 0;  // appliance points that exceeded scale

  std::size_t window_length() const { return aggregate.size(); }
};

// Scales both windows into [0, 1] by the aggregate maximum.  Windows whose
// aggregate never rises above 0 W carry no usable signal and are skipped.
// Target points above the aggregate maximum (sub-meter noise) clamp to 1 and
// are counted.
inline std::optional<SamplePair> normalize_window(const WindowSlice& slice,
                                                  SampleRole role,
                                                  SampleKind kind) {
  const auto it =
      std::max_element(slice.aggregate.begin(), slice.aggregate.end());
  if (it == slice.aggregate.end() || !(*it > 0)) return std::nullopt;
  const double scale = *it;
  SamplePair out;
  out.scale_watts = scale;
  out.role = role;
  out.kind = kind;
  out.aggregate.resize(slice.aggregate.size());
  out.appliance.resize(slice.appliance.size());
  for (std::size_t i = 0; i < slice.aggregate.size(); ++i) {
    out.aggregate[i] = std::max(0.0, slice.aggregate[i] / scale);
    double a = std::max(0.0, slice.appliance[i] / scale);
    if (a > 1.0) {
      a = 1.0;
      ++out.clamped_targets;
    }
    out.appliance[i] = a;
  }
  return out;
}

// Decision record of the training-set quality filter.
struct FilterDecision {
  bool keep = true;
  bool activation_too_short = false;   // activation covers < 1/3 of the window
  bool aggregate_dominated = false;    // background swamps the target
};

// Applies the two discard rules to a candidate positive *training* pair:
// discard when the activation spans less than a third of the window, or when
// the aggregate exceeds three times the target on more than half the points.
// Test pairs are never filtered.
inline FilterDecision filter_training_pair(const SamplePair& pair,
                                           std::size_t activation_points) {
  FilterDecision d;
  const std::size_t w = pair.window_length();
  if (w == 0) throw ShapeError("filter: empty pair");
  if (activation_points * 3 < w) {
    d.keep = false;
    d.activation_too_short = true;
  }
  std::size_t dominated = 0;
  for (std::size_t i = 0; i < w; ++i) {
    if (pair.aggregate[i] > 3.0 * pair.appliance[i]) ++dominated;
  }
  if (dominated * 2 > w) {
    d.keep = false;
    d.aggregate_dominated = true;
  }
  return d;
}

}  // namespace nilm
