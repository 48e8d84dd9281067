// Command-line front end for the disaggregation pipeline.
//
//   nilm synth     --manifest M [--seed N] [--workers N] [--out DIR]
//   nilm prepare   --manifest M [--seed N] [--workers N] [--out DIR]
//   nilm train     --manifest M [--seed N] [--workers N] [--out DIR]
//   nilm evaluate  --manifest M [--checkpoint F] [--dump-predictions] ...
//   nilm inspect   --checkpoint F
//
// One manifest file drives a whole experiment; --seed and --out override the
// manifest's master seed and output directory without editing the file.
// Exit codes: 0 success, 1 configuration error, 2 data/runtime error,
// 3 numeric abort.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nilm/pipeline.hpp"

namespace {

using namespace nilm;

struct CommonOptions {
  std::string manifest_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string output_dir;
};

// Attaches the flags shared by every pipeline subcommand.
void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("-m,--manifest", opt.manifest_path,
                  "experiment manifest (json)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "override the manifest's master seed");
  cmd->add_option("--workers", opt.workers, "worker thread cap (default 1)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", opt.output_dir,
                  "override the manifest's output directory");
}

ExperimentManifest load(const CommonOptions& opt) {
  ExperimentManifest m = load_manifest(opt.manifest_path);
  if (opt.seed) m.seed = *opt.seed;
  if (!opt.output_dir.empty()) m.output_dir = opt.output_dir;
  set_worker_count(opt.workers);
  return m;
}

// The digest the checkpoint would carry if it had been written from this
// manifest's model section; lets evaluate warn about stale checkpoints.
std::string manifest_model_digest(const json& model_json) {
  const std::string kind = model_json.is_object() &&
                                   model_json.contains("kind")
                               ? model_json.at("kind").get<std::string>()
                               : std::string("multiscale");
  json normalized;
  if (kind == "multiscale") {
    normalized = ModelConfig::from_json(
                     model_json.is_object() && !model_json.empty()
                         ? model_json
                         : json::object())
                     .to_json();
  } else if (kind == "baseline_cnn") {
    normalized = BaselineCnnConfig::from_json(model_json).to_json();
  } else {
    return "";
  }
  return detail::hex64(json_digest(normalized));
}

int cmd_synth(const CommonOptions& opt) {
  const ExperimentManifest m = load(opt);
  run_synth(m, opt.workers);
  const auto out = std::filesystem::path(m.resolve(m.output_dir)) / "synth";
  std::cout << "wrote " << (m.synth ? m.synth->houses.size() : 0)
            << " synthetic houses under " << out.string() << "\n";
  return 0;
}

int cmd_prepare(const CommonOptions& opt) {
  const ExperimentManifest m = load(opt);
  const PrepareSummary summary = run_prepare(m, opt.workers);
  std::cout << summary.to_text(m);
  std::cout << "shards written under "
            << (std::filesystem::path(m.resolve(m.output_dir)) / "shards").string()
            << "\n";
  return 0;
}

int cmd_train(const CommonOptions& opt) {
  const ExperimentManifest m = load(opt);
  for (const auto& s : run_train(m, opt.workers)) {
    std::cout << "trained " << s.appliance << ": " << s.epochs_run
              << " epochs" << (s.early_stopped ? " (early stop)" : "")
              << ", final train loss " << s.final_train_loss;
    if (s.best_val_loss) std::cout << ", best val loss " << *s.best_val_loss;
    std::cout << " -> " << s.checkpoint_path << "\n";
  }
  return 0;
}

int cmd_evaluate(const CommonOptions& opt, const std::string& checkpoint,
                 bool dump_predictions) {
  const ExperimentManifest m = load(opt);
  const auto rows = run_evaluate(m, opt.workers, checkpoint, dump_predictions);
  const std::string expected = manifest_model_digest(m.model);
  for (const auto& row : rows) {
    if (!expected.empty() && row.config_digest != expected) {
      std::cerr << "warning: checkpoint for \"" << row.appliance
                << "\" was trained with model config " << row.config_digest
                << " but the manifest describes " << expected
                << "; evaluating anyway\n";
    }
  }
  std::cout << format_report_table(rows);
  std::cout << "report written under "
            << (std::filesystem::path(m.resolve(m.output_dir)) / "reports").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence-to-sequence energy disaggregation toolkit"};
  app.require_subcommand(1);

  CommonOptions synth_opt, prepare_opt, train_opt, eval_opt;
  std::string eval_checkpoint, inspect_checkpoint_path;
  bool dump_predictions = false;

  add_common(app.add_subcommand("synth", "generate synthetic house data"),
             synth_opt);
  add_common(app.add_subcommand(
                 "prepare", "ingest, resample, extract, sample and shard"),
             prepare_opt);
  add_common(app.add_subcommand("train", "train one model per appliance"),
             train_opt);
  CLI::App* eval_cmd = app.add_subcommand(
      "evaluate", "score checkpoints against the test shards");
  add_common(eval_cmd, eval_opt);
  eval_cmd->add_option("--checkpoint", eval_checkpoint,
                       "evaluate this checkpoint file instead of the "
                       "default (single-appliance manifests only)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_flag("--dump-predictions", dump_predictions,
                     "also write per-point prediction csv files");

  CLI::App* inspect_cmd =
      app.add_subcommand("inspect", "describe a checkpoint's contents");
  inspect_cmd
      ->add_option("-c,--checkpoint", inspect_checkpoint_path,
                   "checkpoint file to describe")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // bad flags are configuration errors
  }

  try {
    if (app.got_subcommand("synth")) return cmd_synth(synth_opt);
    if (app.got_subcommand("prepare")) return cmd_prepare(prepare_opt);
    if (app.got_subcommand("train")) return cmd_train(train_opt);
    if (app.got_subcommand("evaluate")) {
      return cmd_evaluate(eval_opt, eval_checkpoint, dump_predictions);
    }
    if (app.got_subcommand("inspect")) {
      std::cout << nilm::inspect_checkpoint(inspect_checkpoint_path);
      return 0;
    }
  } catch (const nilm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nilm::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nilm::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nilm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
