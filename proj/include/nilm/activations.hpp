#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nilm/errors.hpp"
#include "nilm/series.hpp"

// Appliance activation extraction.
//
// An activation is a maximal span of samples at or above the on-power
// threshold, where above-threshold runs separated by strictly less than the
// minimum off-duration are merged into one span, and spans lasting less than
// the minimum on-duration are discarded.  Durations count samples times the
// series period; threshold and duration comparisons are inclusive (>=).
// Remaining gap samples read as 0 W, so a long outage inside a span behaves
// like the appliance switching off.

namespace nilm {

struct ActivationSpec {
  double on_power_threshold_watts = 0;
  double min_on_duration_seconds = 0;
  double min_off_duration_seconds = 0;

  void validate() const {
    if (!(on_power_threshold_watts > 0)) {
      throw ConfigError("activation: on-power threshold must be positive");
    }
    if (min_on_duration_seconds < 0 || min_off_duration_seconds < 0) {
      throw ConfigError("activation: durations must be non-negative");
    }
  }
};

// Half-open sample range [begin, end).
struct Activation {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }

  bool operator==(const Activation& o) const {
    return begin == o.begin && end == o.end;
  }
};

inline std::vector<Activation> extract_activations(const PowerSeries& s,
                                                   const ActivationSpec& spec) {
  spec.validate();
  std::vector<Activation> out;
  Activation pending{0, 0};
  bool has_pending = false;
  std::size_t run_begin = 0;
  bool in_run = false;
  const std::size_t n = s.values.size();

  const auto close_pending = [&]() {
    if (has_pending && static_cast<double>(pending.length()) * s.period >=
                           spec.min_on_duration_seconds) {
      out.push_back(pending);
    }
    has_pending = false;
  };

  for (std::size_t t = 0; t <= n; ++t) {
    const bool on = t < n && !s.gaps[t] &&
                    s.values[t] >= spec.on_power_threshold_watts;
    if (on) {
      if (!in_run) {
        run_begin = t;
        in_run = true;
      }
      continue;
    }
    if (in_run) {
      const Activation run{run_begin, t};
      in_run = false;
      if (has_pending &&
          static_cast<double>(run.begin - pending.end) * s.period <
              spec.min_off_duration_seconds) {
        pending.end = run.end;  // off-gap strictly shorter than minimum: merge
      } else {
        close_pending();
        pending = run;
        has_pending = true;
      }
    }
  }
  close_pending();
  return out;
}

}  // namespace nilm
