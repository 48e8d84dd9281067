#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nilm/checkpoint.hpp"
#include "nilm/errors.hpp"
#include "nilm/eval.hpp"
#include "nilm/manifest.hpp"
#include "nilm/model.hpp"
#include "nilm/sampling.hpp"
#include "nilm/shards.hpp"
#include "nilm/synth.hpp"
#include "nilm/training.hpp"

// End-to-end orchestration shared by the CLI and the tests: synth -> prepare
// -> train -> evaluate, plus checkpoint inspection.  Every step derives its
// randomness from the manifest seed and records that seed in its artifacts.
//
// Output layout under the manifest's output_dir:
//   synth/house-<id>/<channel>.csv      generated data
//   shards/<appliance>.{train,test}.shard
//   prepare_summary.txt
//   checkpoints/<appliance>.ckpt        best-validation parameters
//   checkpoints/<appliance>.last.ckpt   rolling cadence checkpoint
//   curves/<appliance>.loss.csv
//   reports/report.{csv,txt}            one row per appliance
//   reports/predictions-<appliance>.csv (on request)
//   meta/<command>.json                 command, seed, workers, digest

namespace nilm {

namespace fs = std::filesystem;

namespace detail {

inline fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError(p.string() + ": cannot create directory");
  return p;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline void write_meta(const ExperimentManifest& m, const fs::path& out_dir,
                       const std::string& command, int workers) {
  ensure_dir(out_dir / "meta");
  std::ofstream os(out_dir / "meta" / (command + ".json"), std::ios::trunc);
  if (!os) throw IoError("cannot write command metadata");
  os << json{{"command", command},
             {"seed", m.seed},
             {"workers", workers},
             {"manifest_digest", hex64(m.digest)}}
            .dump(2)
     << '\n';
}

inline std::string format_count(std::size_t n) {
  std::ostringstream os;
  os << n;
  if (n >= 1000000) {
    os << " (" << std::fixed << std::setprecision(2)
       << static_cast<double>(n) / 1e6 << " M)";
  }
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

// Writes the synthetic CSVs the manifest's houses section can then reference.
inline void run_synth(const ExperimentManifest& m, int workers = 1) {
  if (!m.synth) {
    throw ConfigError("synth: the manifest has no synth section");
  }
  const fs::path out_dir = m.resolve(m.output_dir);
  for (const auto& house : m.synth->houses) {
    const SynthHouse data =
        synth_house(m.synth->scenario, house.hours,
                    derive_seed(m.seed, "synth-house",
                                static_cast<std::uint64_t>(house.id)));
    const fs::path dir = detail::ensure_dir(
        out_dir / "synth" / ("house-" + std::to_string(house.id)));
    write_series_csv((dir / "mains.csv").string(), data.aggregate);
    for (const auto& chan : data.appliances) {
      write_series_csv((dir / (chan.name + ".csv")).string(), chan.series);
    }
  }
  detail::write_meta(m, out_dir, "synth", workers);
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareApplianceStats {
  std::string appliance;
  std::size_t houses_used = 0;
  std::size_t activations = 0;
  std::size_t train_positive = 0, train_negative = 0;
  std::size_t test_positive = 0, test_negative = 0;
  std::size_t skipped_positive = 0;  // no legal placement / unusable window
  std::size_t skipped_negative = 0;
  std::size_t filtered_short_activation = 0;
  std::size_t filtered_aggregate_dominated = 0;
  std::size_t clamped_target_points = 0;

  std::size_t train_total() const { return train_positive + train_negative; }
  std::size_t test_total() const { return test_positive + test_negative; }
};

struct PrepareSummary {
  std::uint64_t seed = 0;
  std::vector<PrepareApplianceStats> stats;

  std::string to_text(const ExperimentManifest& m) const {
    std::ostringstream os;
    os << "prepare summary (seed " << seed << ")\n";
    for (const auto& s : stats) {
      const ApplianceManifest* a = m.find_appliance(s.appliance);
      os << "\n" << s.appliance << ":\n";
      if (a != nullptr) {
        os << "  spec: on-threshold " << a->activation.on_power_threshold_watts
           << " W, min-on " << a->activation.min_on_duration_seconds
           << " s, min-off " << a->activation.min_off_duration_seconds
           << " s, window " << a->window_length << " samples\n";
      }
      os << "  houses used: " << s.houses_used << "\n"
         << "  activations: " << s.activations << "\n"
         << "  train pairs: " << s.train_total() << " (" << s.train_positive
         << " positive, " << s.train_negative << " negative)\n"
         << "  test pairs: " << s.test_total() << " (" << s.test_positive
         << " positive, " << s.test_negative << " negative)\n"
         << "  filtered (training only): " << s.filtered_short_activation
         << " short-activation, " << s.filtered_aggregate_dominated
         << " aggregate-dominated\n"
         << "  skipped: " << s.skipped_positive << " positive, "
         << s.skipped_negative << " negative\n"
         << "  clamped target points: " << s.clamped_target_points << "\n";
    }
    return os.str();
  }
};

inline PrepareSummary run_prepare(const ExperimentManifest& m,
                                  int workers = 1) {
  if (m.houses.empty()) {
    throw ConfigError("prepare: the manifest lists no houses");
  }
  const fs::path out_dir = m.resolve(m.output_dir);
  detail::ensure_dir(out_dir / "shards");
  PrepareSummary summary;
  summary.seed = m.seed;

  for (const auto& [name, spec] : m.appliances) {
    PrepareApplianceStats st;
    st.appliance = name;
    std::vector<SamplePair> train_pairs, test_pairs;

    for (const auto& house : m.houses) {
      const auto src = house.appliances.find(name);
      if (src == house.appliances.end()) continue;
      if (std::find(spec.exclude_houses.begin(), spec.exclude_houses.end(),
                    house.id) != spec.exclude_houses.end()) {
        continue;
      }
      const bool is_train = house.role == "train";
      const PowerSeries agg = resample_to_grid(
          ingest_csv(m.resolve(house.aggregate.path),
                     house.aggregate.columns));
      const PowerSeries app = resample_to_grid(
          ingest_csv(m.resolve(src->second.path), src->second.columns));
      const AlignedPair pair = align_series(agg, app);
      const std::vector<Activation> acts =
          extract_activations(pair.appliance_series(), spec.activation);
      st.houses_used += 1;
      st.activations += acts.size();

      Rng rng(derive_seed(m.seed, "sample:" + name,
                          static_cast<std::uint64_t>(house.id)));
      auto& sink = is_train ? train_pairs : test_pairs;
      const SampleRole role =
          is_train ? SampleRole::train : SampleRole::test;

      for (const Activation& act : acts) {
        std::size_t accepted_here = 0;
        for (int rep = 0; rep < m.sampling.positives_per_activation; ++rep) {
          const auto slice =
              sample_positive(pair, act, spec.window_length, rng);
          if (!slice) {
            ++st.skipped_positive;
            continue;
          }
          auto sp = normalize_window(*slice, role, SampleKind::positive);
          if (!sp) {
            ++st.skipped_positive;
            continue;
          }
          st.clamped_target_points += sp->clamped_targets;
          if (is_train) {
            const FilterDecision d =
                filter_training_pair(*sp, act.length());
            if (!d.keep) {
              if (d.activation_too_short) ++st.filtered_short_activation;
              if (d.aggregate_dominated) ++st.filtered_aggregate_dominated;
              continue;
            }
          }
          sink.push_back(std::move(*sp));
          ++accepted_here;
          (is_train ? st.train_positive : st.test_positive) += 1;
        }
        // the negative slice for an activation is deterministic, so draw it
        // at most once per activation
        if (accepted_here > 0 &&
            rng.uniform() < std::min(1.0, m.sampling.negatives_per_positive)) {
          const auto nslice = sample_negative(pair, act, spec.window_length);
          auto np = nslice ? normalize_window(*nslice, role,
                                              SampleKind::negative)
                           : std::nullopt;
          if (np) {
            st.clamped_target_points += np->clamped_targets;
            sink.push_back(std::move(*np));
            (is_train ? st.train_negative : st.test_negative) += 1;
          } else {
            ++st.skipped_negative;
          }
        }
      }
    }

    write_shards((out_dir / "shards" / (name + ".train.shard")).string(),
                 train_pairs, m.seed);
    write_shards((out_dir / "shards" / (name + ".test.shard")).string(),
                 test_pairs, m.seed);
    summary.stats.push_back(std::move(st));
  }

  std::ofstream os(out_dir / "prepare_summary.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write prepare summary");
  os << summary.to_text(m);
  detail::write_meta(m, out_dir, "prepare", workers);
  return summary;
}

// ---------------------------------------------------------------------------
// train

struct TrainApplianceSummary {
  std::string appliance;
  int epochs_run = 0;
  bool early_stopped = false;
  std::optional<double> best_val_loss;
  double final_train_loss = 0;
  std::string checkpoint_path;
};

namespace detail {

template <typename S, typename Model>
TrainApplianceSummary train_one(Model& model, const std::string& name,
                                const ExperimentManifest& m,
                                const std::vector<SamplePair>& pairs,
                                const fs::path& out_dir) {
  Rng init_rng(derive_seed(m.seed, "init:" + name));
  model.init_parameters(init_rng);

  TrainConfig cfg = m.train;
  cfg.seed = derive_seed(m.seed, "train:" + name);

  ensure_dir(out_dir / "checkpoints");
  ensure_dir(out_dir / "curves");
  const fs::path final_path = out_dir / "checkpoints" / (name + ".ckpt");
  const fs::path last_path = out_dir / "checkpoints" / (name + ".last.ckpt");

  const json meta{{"appliance", name},
                  {"seed", m.seed},
                  {"train", cfg.to_json()}};
  const auto save = [&](const fs::path& path, int epoch) {
    json tagged = meta;
    tagged["epoch"] = epoch;
    save_checkpoint(path.string(), make_checkpoint<S>(model, tagged));
  };

  const auto hook = [&](int epoch, double) {
    if (cfg.checkpoint_every_epochs > 0 &&
        (epoch + 1) % cfg.checkpoint_every_epochs == 0) {
      save(last_path, epoch);
    }
  };

  const TrainResult result = train_model<S>(model, pairs, cfg, hook);
  save(final_path, result.epochs_run);
  write_loss_csv((out_dir / "curves" / (name + ".loss.csv")).string(),
                 result.curve);

  TrainApplianceSummary s;
  s.appliance = name;
  s.epochs_run = result.epochs_run;
  s.early_stopped = result.early_stopped;
  s.best_val_loss = result.best_val_loss;
  s.final_train_loss =
      result.curve.empty() ? 0.0 : result.curve.back().train_loss;
  s.checkpoint_path = final_path.string();
  return s;
}

inline std::string model_kind(const json& model_json) {
  return model_json.is_object() && model_json.contains("kind")
             ? model_json.at("kind").get<std::string>()
             : std::string("multiscale");
}

inline std::string model_precision(const json& model_json) {
  return model_json.is_object() && model_json.contains("precision")
             ? model_json.at("precision").get<std::string>()
             : std::string("float32");
}

}  // namespace detail

inline std::vector<TrainApplianceSummary> run_train(
    const ExperimentManifest& m, int workers = 1) {
  const fs::path out_dir = m.resolve(m.output_dir);
  std::vector<TrainApplianceSummary> out;
  for (const auto& [name, spec] : m.appliances) {
    const fs::path shard_path = out_dir / "shards" / (name + ".train.shard");
    if (!fs::exists(shard_path)) {
      throw DataError(shard_path.string() +
                      ": no training shards for \"" + name +
                      "\"; run the prepare step first");
    }
    const ShardFile shard = read_shards(shard_path.string());
    if (shard.records.empty()) {
      throw DataError(shard_path.string() + ": shard holds no pairs");
    }

    const std::string kind = detail::model_kind(m.model);
    const std::string precision = detail::model_precision(m.model);
    if (kind == "multiscale") {
      const ModelConfig cfg = ModelConfig::from_json(
          m.model.is_object() && !m.model.empty() ? m.model : json::object());
      if (precision == "float64") {
        MultiScaleModel<double> model(cfg);
        out.push_back(detail::train_one<double>(model, name, m, shard.records,
                                                out_dir));
      } else {
        MultiScaleModel<float> model(cfg);
        out.push_back(detail::train_one<float>(model, name, m, shard.records,
                                               out_dir));
      }
    } else if (kind == "baseline_cnn") {
      const BaselineCnnConfig cfg = BaselineCnnConfig::from_json(m.model);
      if (precision == "float64") {
        BaselineCnn<double> model(cfg);
        out.push_back(detail::train_one<double>(model, name, m, shard.records,
                                                out_dir));
      } else {
        BaselineCnn<float> model(cfg);
        out.push_back(detail::train_one<float>(model, name, m, shard.records,
                                               out_dir));
      }
    } else {
      throw ConfigError("train: unknown model kind \"" + kind + "\"");
    }
  }
  detail::write_meta(m, out_dir, "train", workers);
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

namespace detail {

// Wraps a model as a per-pair predictor (inference mode, no graph).
template <typename S, typename Model>
auto make_predictor(const Model& model) {
  return [&model](const SamplePair& pair) {
    NoGradGuard guard;
    const std::size_t w = pair.window_length();
    std::vector<S> x(w);
    for (std::size_t i = 0; i < w; ++i) {
      x[i] = static_cast<S>(pair.aggregate[i]);
    }
    const Tensor<S> input = Tensor<S>::from({1, 1, w}, std::move(x));
    const Tensor<S> y = model.forward(input, ForwardCtx{Phase::eval, nullptr});
    std::vector<double> out(w);
    for (std::size_t i = 0; i < w; ++i) {
      out[i] = static_cast<double>(y.data()[i]);
    }
    return out;
  };
}

template <typename S, typename Model>
EvalResult evaluate_model(const Model& model, const std::string& name,
                          const ApplianceManifest& spec,
                          const std::vector<SamplePair>& pairs,
                          const fs::path& out_dir, bool dump_predictions) {
  EvalOptions opt;
  opt.on_threshold_watts = spec.activation.on_power_threshold_watts;
  opt.mae_normalizer_watts = spec.mae_normalizer_watts;
  auto predictor = make_predictor<S>(model);
  EvalResult row = evaluate_pairs(predictor, pairs, opt);
  row.appliance = name;
  if (dump_predictions) {
    ensure_dir(out_dir / "reports");
    write_prediction_csv(
        (out_dir / "reports" / ("predictions-" + name + ".csv")).string(),
        predictor, pairs);
  }
  return row;
}

}  // namespace detail

// Evaluates every appliance's checkpoint against its test shard and writes
// the report files.  `checkpoint_override` replaces the default checkpoint
// path and is only legal when the manifest lists exactly one appliance.
inline std::vector<EvalResult> run_evaluate(
    const ExperimentManifest& m, int workers = 1,
    const std::string& checkpoint_override = "",
    bool dump_predictions = false) {
  const fs::path out_dir = m.resolve(m.output_dir);
  if (!checkpoint_override.empty() && m.appliances.size() != 1) {
    throw ConfigError(
        "evaluate: --checkpoint needs a single-appliance manifest");
  }
  std::vector<EvalResult> rows;
  for (const auto& [name, spec] : m.appliances) {
    const fs::path shard_path = out_dir / "shards" / (name + ".test.shard");
    if (!fs::exists(shard_path)) {
      throw DataError(shard_path.string() + ": no test shards for \"" + name +
                      "\"; run the prepare step first");
    }
    const ShardFile shard = read_shards(shard_path.string());
    if (shard.records.empty()) {
      throw DataError(shard_path.string() + ": shard holds no pairs");
    }
    const std::string ckpt_path =
        checkpoint_override.empty()
            ? (out_dir / "checkpoints" / (name + ".ckpt")).string()
            : checkpoint_override;
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (!ck.config.contains("model")) {
      throw IoError(ckpt_path + ": checkpoint config has no model section");
    }
    const json& mj = ck.config.at("model");
    const std::string kind = detail::model_kind(mj);
    const std::string precision = detail::model_precision(mj);

    EvalResult row;
    if (kind == "multiscale") {
      const ModelConfig cfg = ModelConfig::from_json(mj);
      if (precision == "float64") {
        MultiScaleModel<double> model(cfg);
        load_into_model<double>(ck, model);
        row = detail::evaluate_model<double>(model, name, spec, shard.records,
                                             out_dir, dump_predictions);
      } else {
        MultiScaleModel<float> model(cfg);
        load_into_model<float>(ck, model);
        row = detail::evaluate_model<float>(model, name, spec, shard.records,
                                            out_dir, dump_predictions);
      }
    } else if (kind == "baseline_cnn") {
      const BaselineCnnConfig cfg = BaselineCnnConfig::from_json(mj);
      if (precision == "float64") {
        BaselineCnn<double> model(cfg);
        load_into_model<double>(ck, model);
        row = detail::evaluate_model<double>(model, name, spec, shard.records,
                                             out_dir, dump_predictions);
      } else {
        BaselineCnn<float> model(cfg);
        load_into_model<float>(ck, model);
        row = detail::evaluate_model<float>(model, name, spec, shard.records,
                                            out_dir, dump_predictions);
      }
    } else {
      throw IoError(ckpt_path + ": unknown model kind \"" + kind + "\"");
    }
    row.seed = m.seed;
    row.config_digest = detail::hex64(json_digest(mj));
    rows.push_back(std::move(row));
  }

  detail::ensure_dir(out_dir / "reports");
  write_report_csv((out_dir / "reports" / "report.csv").string(), rows);
  std::ofstream os(out_dir / "reports" / "report.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write report table");
  os << format_report_table(rows);
  detail::write_meta(m, out_dir, "evaluate", workers);
  return rows;
}

// ---------------------------------------------------------------------------
// inspect

// Renders a checkpoint's contents: shapes, parameter totals and, for the
// multi-scale network, each body's receptive field.
inline std::string inspect_checkpoint(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  std::ostringstream os;
  os << "checkpoint: " << path << "\n";
  if (ck.config.contains("meta")) {
    const json& meta = ck.config.at("meta");
    if (meta.contains("appliance")) {
      os << "appliance: " << meta.at("appliance").get<std::string>() << "\n";
    }
    if (meta.contains("seed")) {
      os << "seed: " << meta.at("seed") << "\n";
    }
  }
  os << "\n" << std::left << std::setw(34) << "tensor" << std::setw(16)
     << "shape" << std::right << std::setw(10) << "values" << "\n";
  os << std::string(60, '-') << "\n";
  for (const auto& t : ck.tensors) {
    os << std::left << std::setw(34) << t.name << std::setw(16)
       << shape_str(t.shape) << std::right << std::setw(10) << t.numel()
       << "\n";
  }
  os << std::string(60, '-') << "\n";
  os << "total parameters: " << detail::format_count(ck.total_parameters())
     << "\n";

  if (ck.config.contains("model")) {
    const json& mj = ck.config.at("model");
    const std::string kind = detail::model_kind(mj);
    if (kind == "multiscale") {
      const ModelConfig cfg = ModelConfig::from_json(mj);
      os << "\nreceptive fields (kernel size " << cfg.kernel_size << "):\n";
      long long deepest = 0;
      for (std::size_t i = 0; i < cfg.blocks_per_body.size(); ++i) {
        const long long rf =
            body_receptive_field(cfg.kernel_size, cfg.blocks_per_body[i]);
        deepest = std::max(deepest, rf);
        os << "  body " << i << ": " << cfg.blocks_per_body[i]
           << " blocks, dilations 1.."
           << (1LL << (cfg.blocks_per_body[i] - 1)) << " -> " << rf
           << " samples (" << rf * static_cast<long long>(kGridPeriodSeconds)
           << " s)\n";
      }
      if (cfg.kernel_size == 5 &&
          std::find(cfg.blocks_per_body.begin(), cfg.blocks_per_body.end(),
                    5) != cfg.blocks_per_body.end()) {
        os << "note: a receptive field of 259 samples (1554 s) is sometimes "
              "quoted for the deepest five-block stack; the closed form "
              "(2^(D+2) - 2) * (k - 1) + 1 gives 249 samples (1494 s), "
              "which is what this implementation uses.\n";
      }
    } else if (kind == "baseline_cnn") {
      const BaselineCnnConfig cfg = BaselineCnnConfig::from_json(mj);
      const long long rf =
          static_cast<long long>(cfg.channels.size()) *
              (cfg.kernel_size - 1) +
          1;
      os << "\nreceptive field: " << rf << " samples ("
         << rf * static_cast<long long>(kGridPeriodSeconds) << " s)\n";
    }
  }
  return os.str();
}

}  // namespace nilm
