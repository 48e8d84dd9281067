#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nilm/errors.hpp"
#include "nilm/sampling.hpp"

// Evaluation: denormalization back to watts, on/off classification at the
// appliance threshold, pooled confusion counts, recall / precision / F1 and
// mean absolute error, plus report writers.
//
// Definitions: recall = tp / (tp + fn), precision = tp / (tp + fp),
// f1 = 2 * precision * recall / (precision + recall), mae = mean |truth -
// prediction| in watts.  Ratios with a zero denominator evaluate to zero and
// set the degenerate flag instead of dividing by zero.

namespace nilm {

inline std::vector<double> denormalize(const std::vector<double>& normalized,
                                       double scale_watts) {
  if (!(scale_watts > 0)) {
    throw DataError("denormalize: scale must be positive, got " +
                    std::to_string(scale_watts));
  }
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = normalized[i] * scale_watts;
  }
  return out;
}

// On/off state per sample: on means watts at or above the threshold.
inline std::vector<std::uint8_t> classify_on_off(
    const std::vector<double>& watts, double threshold_watts) {
  if (!(threshold_watts > 0)) {
    throw ConfigError("classify: threshold must be positive");
  }
  std::vector<std::uint8_t> out(watts.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = watts[i] >= threshold_watts ? 1 : 0;
  }
  return out;
}

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

inline ConfusionCounts confusion_counts(
    const std::vector<std::uint8_t>& truth,
    const std::vector<std::uint8_t>& predicted) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("confusion: truth has " + std::to_string(truth.size()) +
                     " samples, prediction has " +
                     std::to_string(predicted.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && predicted[i]) {
      ++c.tp;
    } else if (!truth[i] && predicted[i]) {
      ++c.fp;
    } else if (truth[i] && !predicted[i]) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

struct ClassificationMetrics {
  double recall = 0;
  double precision = 0;
  double f1 = 0;
  bool degenerate = false;  // some ratio had a zero denominator
};

inline ClassificationMetrics metrics_from_counts(const ConfusionCounts& c) {
  ClassificationMetrics m;
  if (c.tp + c.fn == 0) {
    m.degenerate = true;
  } else {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (c.tp + c.fp == 0) {
    m.degenerate = true;
  } else {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (m.precision + m.recall == 0) {
    m.degenerate = true;
  } else {
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

inline double mean_absolute_error(const std::vector<double>& truth,
                                  const std::vector<double>& predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw ShapeError("mae: size mismatch or empty input");
  }
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    acc += std::abs(truth[i] - predicted[i]);
  }
  return acc / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  double on_threshold_watts = 0;
  // when set, the report adds mae / normalizer as a unitless column
  std::optional<double> mae_normalizer_watts;
};

struct EvalResult {
  std::string appliance;
  std::size_t windows = 0;
  std::size_t points = 0;
  ConfusionCounts counts;
  ClassificationMetrics metrics;
  double mae_watts = 0;
  std::optional<double> normalized_mae;
  std::uint64_t seed = 0;
  std::string config_digest;
};

// Core evaluation over test pairs.  `predict` maps one SamplePair to its
// normalized prediction sequence; using a callable here keeps the metric
// path independent of any concrete model (an oracle that echoes the target
// must score a perfect F1 and zero MAE).
template <typename Predictor>
EvalResult evaluate_pairs(Predictor&& predict,
                          const std::vector<SamplePair>& pairs,
                          const EvalOptions& opt) {
  if (pairs.empty()) throw DataError("evaluate: no test pairs");
  if (!(opt.on_threshold_watts > 0)) {
    throw ConfigError("evaluate: on-power threshold must be positive");
  }
  EvalResult out;
  double abs_err = 0;
  for (const auto& pair : pairs) {
    const std::vector<double> pred_norm = predict(pair);
    if (pred_norm.size() != pair.window_length()) {
      throw ShapeError("evaluate: prediction length " +
                       std::to_string(pred_norm.size()) +
                       " does not match window " +
                       std::to_string(pair.window_length()));
    }
    const std::vector<double> pred_watts =
        denormalize(pred_norm, pair.scale_watts);
    const std::vector<double> truth_watts =
        denormalize(pair.appliance, pair.scale_watts);
    out.counts += confusion_counts(
        classify_on_off(truth_watts, opt.on_threshold_watts),
        classify_on_off(pred_watts, opt.on_threshold_watts));
    for (std::size_t i = 0; i < truth_watts.size(); ++i) {
      abs_err += std::abs(truth_watts[i] - pred_watts[i]);
    }
    out.windows += 1;
    out.points += pair.window_length();
  }
  out.metrics = metrics_from_counts(out.counts);
  out.mae_watts = abs_err / static_cast<double>(out.points);
  if (opt.mae_normalizer_watts) {
    if (!(*opt.mae_normalizer_watts > 0)) {
      throw ConfigError("evaluate: mae normalizer must be positive");
    }
    out.normalized_mae = out.mae_watts / *opt.mae_normalizer_watts;
  }
  return out;
}

// ---------------------------------------------------------------------------
// report writers

inline void write_report_csv(const std::string& path,
                             const std::vector<EvalResult>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os << "appliance,windows,points,tp,fp,tn,fn,recall,precision,f1,"
        "mae_watts,normalized_mae,degenerate,seed,config_digest\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.appliance << ',' << r.windows << ',' << r.points << ','
       << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn << ','
       << r.counts.fn << ',' << r.metrics.recall << ',' << r.metrics.precision
       << ',' << r.metrics.f1 << ',' << r.mae_watts << ',';
    if (r.normalized_mae) os << *r.normalized_mae;
    os << ',' << (r.metrics.degenerate ? "yes" : "no") << ',' << r.seed << ','
       << r.config_digest << '\n';
  }
  if (!os) throw IoError(path + ": write failed");
}

inline std::string format_report_table(const std::vector<EvalResult>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "appliance" << std::right << std::setw(9)
     << "windows" << std::setw(9) << "recall" << std::setw(11) << "precision"
     << std::setw(9) << "f1" << std::setw(12) << "mae [W]" << '\n';
  os << std::string(66, '-') << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.appliance << std::right
       << std::setw(9) << r.windows << std::setw(9) << r.metrics.recall
       << std::setw(11) << r.metrics.precision << std::setw(9) << r.metrics.f1
       << std::setw(12) << std::setprecision(1) << r.mae_watts
       << std::setprecision(3);
    if (r.metrics.degenerate) os << "  (degenerate)";
    os << '\n';
  }
  return os.str();
}

// Per-point prediction dump for debugging one appliance's test pairs.
template <typename Predictor>
void write_prediction_csv(const std::string& path, Predictor&& predict,
                          const std::vector<SamplePair>& pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(path + ": cannot open for writing");
  os << "window,offset,aggregate_watts,target_watts,predicted_watts\n";
  os << std::setprecision(10);
  for (std::size_t w = 0; w < pairs.size(); ++w) {
    const auto& pair = pairs[w];
    const std::vector<double> pred = predict(pair);
    for (std::size_t t = 0; t < pair.window_length(); ++t) {
      os << w << ',' << t << ',' << pair.aggregate[t] * pair.scale_watts << ','
         << pair.appliance[t] * pair.scale_watts << ','
         << pred[t] * pair.scale_watts << '\n';
    }
  }
  if (!os) throw IoError(path + ": write failed");
}

}  // namespace nilm
