#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "nilm/checkpoint.hpp"
#include "nilm/eval.hpp"
#include "nilm/model.hpp"

using namespace nilm;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "nilm-eval-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// One window with an obvious on-span in the middle.
std::vector<SamplePair> toy_pairs() {
  std::vector<SamplePair> pairs(2);
  for (auto& p : pairs) {
    p.aggregate = {0.1, 0.9, 1.0, 0.8, 0.1, 0.1, 0.1, 0.1};
    p.appliance = {0.0, 0.9, 0.9, 0.8, 0.0, 0.0, 0.0, 0.0};
    p.scale_watts = 2500.0;
    p.role = SampleRole::test;
  }
  return pairs;
}

}  // namespace

// ---------------------------------------------------------------------------
// metric primitives

TEST_CASE("denormalization restores watts") {
  REQUIRE(denormalize({0.5, 1.0, 0.0}, 200.0) ==
          std::vector<double>{100.0, 200.0, 0.0});
  REQUIRE_THROWS_AS(denormalize({0.5}, 0.0), DataError);
  REQUIRE_THROWS_AS(denormalize({0.5}, -10.0), DataError);
}

TEST_CASE("classification is inclusive at the threshold") {
  const auto on = classify_on_off({99.9, 100.0, 100.1, 0.0}, 100.0);
  REQUIRE(on == std::vector<std::uint8_t>{0, 1, 1, 0});
  REQUIRE_THROWS_AS(classify_on_off({1.0}, 0.0), ConfigError);
}

TEST_CASE("confusion counts match a hand-tallied example") {
  const std::vector<std::uint8_t> truth{1, 1, 0, 0, 1};
  const std::vector<std::uint8_t> pred{1, 0, 1, 0, 1};
  const ConfusionCounts c = confusion_counts(truth, pred);
  REQUIRE(c.tp == 2);
  REQUIRE(c.fn == 1);
  REQUIRE(c.fp == 1);
  REQUIRE(c.tn == 1);
  REQUIRE(c.total() == 5);
  REQUIRE_THROWS_WITH(confusion_counts(truth, {1, 0}),
                      ContainsSubstring("5") && ContainsSubstring("2"));
}

TEST_CASE("recall, precision and f1 match the closed forms") {
  // tp 6, fp 2, fn 6: recall 6/12, precision 6/8, f1 = 2pr/(p+r)
  const ClassificationMetrics m =
      metrics_from_counts(ConfusionCounts{6, 2, 100, 6});
  REQUIRE(m.recall == 0.5);
  REQUIRE(m.precision == 0.75);
  REQUIRE_THAT(m.f1, WithinAbs(0.6, 1e-15));
  REQUIRE_FALSE(m.degenerate);
}

TEST_CASE("zero-denominator ratios flag the result as degenerate") {
  SECTION("nothing on in truth or prediction") {
    const ClassificationMetrics m =
        metrics_from_counts(ConfusionCounts{0, 0, 10, 0});
    REQUIRE(m.degenerate);
    REQUIRE(m.recall == 0.0);
    REQUIRE(m.precision == 0.0);
    REQUIRE(m.f1 == 0.0);
  }
  SECTION("truth has on-samples but the prediction stays off") {
    const ClassificationMetrics m =
        metrics_from_counts(ConfusionCounts{0, 0, 5, 5});
    REQUIRE(m.degenerate);
    REQUIRE(m.recall == 0.0);
  }
  SECTION("perfect prediction is not degenerate") {
    const ClassificationMetrics m =
        metrics_from_counts(ConfusionCounts{3, 0, 2, 0});
    REQUIRE_FALSE(m.degenerate);
    REQUIRE(m.f1 == 1.0);
  }
}

TEST_CASE("mean absolute error matches the worked example") {
  REQUIRE(mean_absolute_error({0.0, 100.0}, {50.0, 50.0}) == 50.0);
  REQUIRE_THROWS_AS(mean_absolute_error({1.0}, {1.0, 2.0}), ShapeError);
  REQUIRE_THROWS_AS(mean_absolute_error({}, {}), ShapeError);
}

// ---------------------------------------------------------------------------
// pair evaluation

TEST_CASE("an oracle that echoes the target scores perfectly") {
  const auto pairs = toy_pairs();
  EvalOptions opt;
  opt.on_threshold_watts = 2000.0;
  const EvalResult r = evaluate_pairs(
      [](const SamplePair& p) { return p.appliance; }, pairs, opt);
  REQUIRE(r.windows == 2);
  REQUIRE(r.points == 16);
  REQUIRE(r.metrics.f1 == 1.0);
  REQUIRE(r.metrics.recall == 1.0);
  REQUIRE(r.metrics.precision == 1.0);
  REQUIRE(r.mae_watts == 0.0);
  REQUIRE_FALSE(r.metrics.degenerate);
  // 0.9 and 0.8 of 2500 W clear the 2000 W threshold; 3 on-points per window
  REQUIRE(r.counts.tp == 6);
  REQUIRE(r.counts.tn == 10);
}

TEST_CASE("an always-off predictor is degenerate with the truth's mae") {
  std::vector<SamplePair> pairs(1);
  pairs[0].aggregate = {0.5, 1.0, 0.6, 0.2};
  pairs[0].appliance = {0.0, 1.0, 0.5, 0.0};
  pairs[0].scale_watts = 100.0;
  EvalOptions opt;
  opt.on_threshold_watts = 60.0;
  opt.mae_normalizer_watts = 100.0;
  const EvalResult r = evaluate_pairs(
      [](const SamplePair& p) {
        return std::vector<double>(p.window_length(), 0.0);
      },
      pairs, opt);
  REQUIRE(r.counts.tp == 0);
  REQUIRE(r.counts.fn == 1);  // only 100 W clears the 60 W threshold
  REQUIRE(r.counts.tn == 3);
  REQUIRE(r.metrics.degenerate);
  REQUIRE_THAT(r.mae_watts, WithinAbs(37.5, 1e-12));
  REQUIRE(r.normalized_mae.has_value());
  REQUIRE_THAT(*r.normalized_mae, WithinAbs(0.375, 1e-12));
}

TEST_CASE("evaluation validates its inputs") {
  const auto echo = [](const SamplePair& p) { return p.appliance; };
  EvalOptions opt;
  opt.on_threshold_watts = 100.0;
  REQUIRE_THROWS_AS(evaluate_pairs(echo, {}, opt), DataError);

  EvalOptions bad;
  bad.on_threshold_watts = 0.0;
  REQUIRE_THROWS_AS(evaluate_pairs(echo, toy_pairs(), bad), ConfigError);

  EvalOptions negative_norm;
  negative_norm.on_threshold_watts = 100.0;
  negative_norm.mae_normalizer_watts = -5.0;
  REQUIRE_THROWS_AS(evaluate_pairs(echo, toy_pairs(), negative_norm),
                    ConfigError);

  REQUIRE_THROWS_WITH(
      evaluate_pairs(
          [](const SamplePair&) { return std::vector<double>{1.0}; },
          toy_pairs(), opt),
      ContainsSubstring("prediction length"));
}

TEST_CASE("evaluating with a real model leaves its parameters untouched") {
  MultiScaleModel<double> model(ModelConfig::with_width(2, 4));
  Rng rng(2026);
  model.init_parameters(rng);
  const std::uint64_t before = parameters_digest<double>(model);

  std::vector<SamplePair> pairs(3);
  Rng data_rng(8);
  for (auto& p : pairs) {
    p.aggregate.resize(16);
    p.appliance.resize(16);
    for (auto& v : p.aggregate) v = data_rng.uniform(0.0, 1.0);
    for (auto& v : p.appliance) v = data_rng.uniform(0.0, 1.0);
    p.scale_watts = 2000.0;
  }
  EvalOptions opt;
  opt.on_threshold_watts = 500.0;
  const EvalResult r = evaluate_pairs(
      [&](const SamplePair& p) {
        NoGradGuard guard;
        const auto y = model.forward(
            Tensor<double>::from({1, 1, 16}, std::vector<double>(p.aggregate)),
            ForwardCtx{Phase::eval, nullptr});
        return y.values();
      },
      pairs, opt);
  REQUIRE(r.windows == 3);
  REQUIRE(parameters_digest<double>(model) == before);
}

// ---------------------------------------------------------------------------
// report writers

TEST_CASE("the report csv has a frozen column layout") {
  EvalResult kettle;
  kettle.appliance = "kettle";
  kettle.windows = 2;
  kettle.points = 128;
  kettle.counts = ConfusionCounts{6, 2, 114, 6};
  kettle.metrics = metrics_from_counts(kettle.counts);
  kettle.mae_watts = 12.5;
  kettle.normalized_mae = 0.005;
  kettle.seed = 77;
  kettle.config_digest = "abc123";

  EvalResult blank;
  blank.appliance = "empty";
  blank.metrics = metrics_from_counts(blank.counts);

  const auto path = temp_file("report.csv");
  write_report_csv(path.string(), {kettle, blank});
  REQUIRE(slurp(path) ==
          "appliance,windows,points,tp,fp,tn,fn,recall,precision,f1,"
          "mae_watts,normalized_mae,degenerate,seed,config_digest\n"
          "kettle,2,128,6,2,114,6,0.5,0.75,0.6,12.5,0.005,no,77,abc123\n"
          "empty,0,0,0,0,0,0,0,0,0,0,,yes,0,\n");
}

TEST_CASE("the text report lists appliances and flags degenerate rows") {
  EvalResult r;
  r.appliance = "microwave";
  r.windows = 5;
  r.counts = ConfusionCounts{0, 0, 40, 0};
  r.metrics = metrics_from_counts(r.counts);
  r.mae_watts = 3.25;
  const std::string table = format_report_table({r});
  REQUIRE_THAT(table, ContainsSubstring("appliance"));
  REQUIRE_THAT(table, ContainsSubstring("microwave"));
  REQUIRE_THAT(table, ContainsSubstring("(degenerate)"));
  REQUIRE_THAT(table, ContainsSubstring("3.2"));
}

TEST_CASE("the prediction dump writes one row per point in watts") {
  std::vector<SamplePair> pairs(1);
  pairs[0].aggregate = {0.5, 1.0};
  pairs[0].appliance = {0.2, 0.4};
  pairs[0].scale_watts = 10.0;
  const auto path = temp_file("pred.csv");
  write_prediction_csv(
      path.string(), [](const SamplePair& p) { return p.appliance; }, pairs);
  REQUIRE(slurp(path) ==
          "window,offset,aggregate_watts,target_watts,predicted_watts\n"
          "0,0,5,2,2\n"
          "0,1,10,4,4\n");
}
