// End-to-end walkthrough of the library API on synthetic data, start to
// finish in a few seconds: generate a house, extract activations, sample and
// normalize windows, train a small model, evaluate it, and round-trip a
// checkpoint.  Every step here is the same call the pipeline front end makes;
// this file is the place to look when wiring the pieces together by hand.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "nilm/nilm.hpp"

using namespace nilm;

namespace {

void banner(const char* title) { std::printf("\n=== %s ===\n", title); }

// Turns one synthetic house into normalized windows: a positive window per
// activation (plus a trailing negative), exactly the sampling scheme the
// prepare step applies, minus sharding.
std::vector<SamplePair> windows_from_house(const SynthHouse& house,
                                           const ActivationSpec& spec,
                                           std::size_t window, SampleRole role,
                                           Rng& rng, std::size_t& dropped) {
  const AlignedPair aligned =
      align_series(house.aggregate, house.appliances[0].series);
  const std::vector<Activation> acts =
      extract_activations(aligned.appliance_series(), spec);

  std::vector<SamplePair> out;
  for (const Activation& act : acts) {
    if (auto slice = sample_positive(aligned, act, window, rng)) {
      if (auto pair = normalize_window(*slice, role, SampleKind::positive)) {
        // Training positives pass through the quality filter; test windows
        // are evaluated as they come.
        if (role == SampleRole::test ||
            filter_training_pair(*pair, act.length()).keep) {
          out.push_back(std::move(*pair));
        } else {
          ++dropped;
        }
      }
    }
    if (auto slice = sample_negative(aligned, act, window)) {
      if (auto pair = normalize_window(*slice, role, SampleKind::negative)) {
        out.push_back(std::move(*pair));
      }
    }
  }
  return out;
}

}  // namespace

int main() {
  // -------------------------------------------------------------- synthesize
  banner("synthesize");
  SynthScenario scenario;
  scenario.noise_sigma_watts = 10.0;
  SynthAppliance heater;
  heater.name = "heater";
  heater.power_watts = 1500.0;
  heater.power_jitter_watts = 40.0;
  heater.on_min_seconds = 90.0;
  heater.on_max_seconds = 180.0;
  heater.off_min_seconds = 120.0;
  heater.off_max_seconds = 420.0;
  SynthAppliance cycler;  // background load the model must learn to ignore
  cycler.name = "cycler";
  cycler.power_watts = 80.0;
  cycler.power_jitter_watts = 8.0;
  cycler.on_min_seconds = 120.0;
  cycler.on_max_seconds = 300.0;
  cycler.off_min_seconds = 120.0;
  cycler.off_max_seconds = 300.0;
  scenario.appliances = {heater, cycler};

  const SynthHouse train_house = synth_house(scenario, 2.0, 11);
  const SynthHouse test_house = synth_house(scenario, 1.0, 22);
  std::printf("train house: %zu samples at %.0f s, %zu ground-truth runs\n",
              train_house.aggregate.size(), train_house.aggregate.period,
              train_house.appliances[0].injected.size());

  // ------------------------------------------------------- extract + sample
  banner("extract and sample");
  ActivationSpec spec;
  spec.on_power_threshold_watts = 750.0;
  spec.min_on_duration_seconds = 12.0;
  spec.min_off_duration_seconds = 12.0;

  const std::size_t window = 32;  // 192 s of context
  Rng sampler(derive_seed(7, "demo:sampler"));
  std::size_t dropped = 0;
  std::vector<SamplePair> train_pairs = windows_from_house(
      train_house, spec, window, SampleRole::train, sampler, dropped);
  const std::vector<SamplePair> test_pairs = windows_from_house(
      test_house, spec, window, SampleRole::test, sampler, dropped);
  std::printf("train windows: %zu, test windows: %zu, filtered out: %zu\n",
              train_pairs.size(), test_pairs.size(), dropped);
  std::printf("window values are normalized: first train aggregate max "
              "= %.3f (scale %.1f W)\n",
              *std::max_element(train_pairs[0].aggregate.begin(),
                                train_pairs[0].aggregate.end()),
              train_pairs[0].scale_watts);

  // ------------------------------------------------------------------ model
  banner("model");
  ModelConfig cfg;
  cfg.blocks_per_body = {1, 2};  // two parallel bodies, scaled down for speed
  cfg.body_channels = ModelConfig::uniform_channels(cfg.blocks_per_body, 8);
  cfg.head_hidden = 16;
  cfg.dropout = 0.1;
  MultiScaleModel<float> model(cfg);
  Rng init(derive_seed(7, "demo:init"));
  model.init_parameters(init);
  std::printf("parameters: %zu\n", model.parameter_count());
  for (std::size_t i = 0; i < cfg.blocks_per_body.size(); ++i) {
    std::printf("body %zu sees %lld samples per output point\n", i,
                body_receptive_field(cfg.kernel_size,
                                     cfg.blocks_per_body[i]));
  }

  // ------------------------------------------------------------------ train
  banner("train");
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 40;
  tc.seed = 7;
  tc.val_fraction = 0.25;
  tc.early_stop_patience = 0;
  const TrainResult result =
      train_model<float>(model, train_pairs, tc, [](int epoch, double val) {
        if ((epoch + 1) % 8 == 0) {
          std::printf("  epoch %d: val loss %.4f\n", epoch + 1, val);
        }
      });
  std::printf("ran %d epochs, best val loss %.4f\n", result.epochs_run,
              result.best_val_loss.value_or(0.0));

  // --------------------------------------------------------------- evaluate
  banner("evaluate");
  EvalOptions opt;
  opt.on_threshold_watts = spec.on_power_threshold_watts;
  opt.mae_normalizer_watts = heater.power_watts;
  // evaluate_pairs takes any callable mapping a pair to its normalized
  // prediction; here it wraps a forward pass in inference mode.
  const auto predict_with = [](const MultiScaleModel<float>& net,
                               const SamplePair& pair) {
    NoGradGuard guard;
    std::vector<float> x(pair.aggregate.begin(), pair.aggregate.end());
    const Tensor<float> y =
        net.forward(Tensor<float>::from({1, 1, pair.window_length()},
                                        std::move(x)),
                    ForwardCtx{Phase::eval, nullptr});
    return std::vector<double>(y.data(), y.data() + pair.window_length());
  };
  EvalResult row = evaluate_pairs(
      [&](const SamplePair& pair) { return predict_with(model, pair); },
      test_pairs, opt);
  row.appliance = "heater";
  std::printf("%s", format_report_table({row}).c_str());

  // ------------------------------------------------------------- checkpoint
  banner("checkpoint round trip");
  const auto path =
      (std::filesystem::temp_directory_path() / "walkthrough.ckpt").string();
  save_checkpoint(path, make_checkpoint<float>(
                            model, json{{"appliance", "heater"}, {"seed", 7}}));
  MultiScaleModel<float> reloaded(cfg);
  load_into_model<float>(load_checkpoint(path), reloaded);
  std::printf("saved, reloaded, predictions identical: %s\n",
              predict_with(model, test_pairs[0]) ==
                      predict_with(reloaded, test_pairs[0])
                  ? "yes"
                  : "NO");
  std::filesystem::remove(path);
  return 0;
}
