#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "nilm/model.hpp"

using namespace nilm;
using Catch::Matchers::WithinAbs;

using Td = Tensor<double>;

TEST_CASE("receptive field closed form at the working kernel size") {
  // (2^(D+2) - 2) * (k - 1) + 1 with k = 5
  REQUIRE(receptive_field(5, 0) == 9);
  REQUIRE(receptive_field(5, 1) == 25);
  REQUIRE(receptive_field(5, 2) == 57);
  REQUIRE(receptive_field(5, 3) == 121);
  REQUIRE(receptive_field(5, 4) == 249);

  // bodies index by block count; block i dilates by 2^i
  REQUIRE(body_receptive_field(5, 2) == 25);
  REQUIRE(body_receptive_field(5, 3) == 57);
  REQUIRE(body_receptive_field(5, 4) == 121);
  REQUIRE(body_receptive_field(5, 5) == 249);

  // a kernel of one sample never sees its neighbours
  REQUIRE(receptive_field(1, 4) == 1);
  REQUIRE(receptive_field(3, 0) == 5);

  // the five-block figure sometimes quoted as 259 does not satisfy the
  // closed form; the formula value is 249
  REQUIRE(body_receptive_field(5, 5) != 259);

  REQUIRE_THROWS_AS(receptive_field(4, 1), ConfigError);
  REQUIRE_THROWS_AS(receptive_field(5, -1), ConfigError);
  REQUIRE_THROWS_AS(body_receptive_field(5, 0), ConfigError);
}

namespace {

// Measures how many input positions influence one output position by pushing
// a gradient back from the window centre and counting nonzero entries.
long long gradient_support(int blocks, int kernel_size, std::size_t window) {
  ModelConfig cfg;
  cfg.kernel_size = kernel_size;
  cfg.blocks_per_body = {blocks};
  cfg.body_channels = ModelConfig::uniform_channels({blocks}, 8);
  cfg.head_hidden = 8;
  cfg.dropout = 0.0;
  MultiScaleModel<double> model(cfg);
  Rng rng(2024);
  model.init_parameters(rng);

  Td x = Td::zeros({1, 1, window});
  Rng fill(7);
  for (double& v : x.values()) v = fill.uniform(0.1, 1.0);
  x.set_requires_grad(true);

  const Td y = model.forward(x, ForwardCtx{Phase::eval, nullptr});
  backward(pick(y, window / 2));

  long long support = 0;
  for (const double g : x.grad()) {
    if (g != 0.0) ++support;
  }
  return support;
}

}  // namespace

TEST_CASE("gradient support width equals the closed-form receptive field") {
  const std::size_t window = 512;
  for (int blocks = 1; blocks <= 4; ++blocks) {
    CAPTURE(blocks);
    REQUIRE(gradient_support(blocks, 5, window) ==
            body_receptive_field(5, blocks));
  }
  REQUIRE(gradient_support(2, 3, 128) == body_receptive_field(3, 2));
}

TEST_CASE("default configuration parameter count") {
  const ModelConfig cfg;  // four bodies of 2/3/4/5 blocks, width 96, head 128
  MultiScaleModel<float> model(cfg);

  // independent count assembled from the layer shapes
  std::size_t expected = 0;
  int concat = 0;
  for (std::size_t body = 0; body < cfg.blocks_per_body.size(); ++body) {
    int c_in = cfg.in_channels;
    for (const int c_out : cfg.body_channels[body]) {
      const std::size_t k = static_cast<std::size_t>(cfg.kernel_size);
      expected += static_cast<std::size_t>(c_out) * c_in * k + c_out;  // conv1
      expected += 2 * static_cast<std::size_t>(c_out);                 // ln1
      expected += static_cast<std::size_t>(c_out) * c_out * k + c_out; // conv2
      expected += 2 * static_cast<std::size_t>(c_out);                 // ln2
      if (c_in != c_out) {
        expected += static_cast<std::size_t>(c_out) * c_in + c_out;    // 1x1
      }
      c_in = c_out;
    }
    concat += c_in;
  }
  expected += static_cast<std::size_t>(cfg.head_hidden) * concat +
              cfg.head_hidden;            // hidden dense
  expected += cfg.head_hidden + 1;        // output unit

  REQUIRE(model.parameter_count() == expected);
  REQUIRE(model.parameter_count() == 1166081u);
}

TEST_CASE("parameter count is independent of the window length") {
  MultiScaleModel<float> model(ModelConfig::with_width(4, 8));
  const std::size_t count = model.parameter_count();
  Rng rng(5);
  model.init_parameters(rng);
  for (const std::size_t window : {std::size_t{64}, std::size_t{1024}}) {
    const auto y = model.forward(Tensor<float>::zeros({1, 1, window}),
                                 ForwardCtx{Phase::eval, nullptr});
    REQUIRE(y.shape() == Shape{1, 1, window});
    REQUIRE(model.parameter_count() == count);
  }
}

TEST_CASE("narrow build keeps the topology but shrinks the count") {
  MultiScaleModel<double> model(ModelConfig::with_width(4, 8));
  // hand count: per body, first block 132 (with projection), later blocks 184
  //   bodies of 2/3/4/5 blocks: 316 + 500 + 684 + 868 = 2368
  //   head: 16 -> 8 dense (136) and 8 -> 1 unit (9)
  REQUIRE(model.parameter_count() == 2513u);
}

TEST_CASE("fresh model with zero weights emits one half everywhere") {
  MultiScaleModel<double> model(ModelConfig::with_width(3, 4));
  const Td y = model.forward(Td::from({1, 1, 6}, {0.1, 0.5, 0.9, 0.2, 0.4, 0.6}),
                             ForwardCtx{Phase::eval, nullptr});
  for (const double v : y.values()) REQUIRE(v == 0.5);
}

TEST_CASE("forward output lies strictly inside (0, 1)") {
  MultiScaleModel<double> model(ModelConfig::with_width(4, 8));
  Rng rng(9);
  model.init_parameters(rng);
  Td x = Td::zeros({2, 1, 32});
  Rng fill(10);
  for (double& v : x.values()) v = fill.uniform(0.0, 1.0);
  const Td y = model.forward(x, ForwardCtx{Phase::eval, nullptr});
  REQUIRE(y.shape() == Shape{2, 1, 32});
  for (const double v : y.values()) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("parameter names are unique and follow the layout") {
  MultiScaleModel<float> model(ModelConfig{});
  const auto named = model.named_parameters();
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& [name, t] : named) {
    REQUIRE(names.insert(name).second);
    total += t.size();
  }
  REQUIRE(total == model.parameter_count());
  REQUIRE(names.count("body0.block0.conv1.weight") == 1);
  REQUIRE(names.count("body3.block4.ln2.beta") == 1);
  REQUIRE(names.count("head.hidden.weight") == 1);
  REQUIRE(names.count("head.out.bias") == 1);
  // only the width-changing first block carries a projection
  REQUIRE(names.count("body0.block0.shortcut.weight") == 1);
  REQUIRE(names.count("body0.block1.shortcut.weight") == 0);
}

TEST_CASE("model config json round trip") {
  ModelConfig cfg;
  cfg.kernel_size = 3;
  cfg.blocks_per_body = {1, 2};
  cfg.body_channels = ModelConfig::uniform_channels({1, 2}, 12);
  cfg.head_hidden = 24;
  cfg.dropout = 0.2;
  cfg.precision = "float64";

  const ModelConfig back = ModelConfig::from_json(cfg.to_json());
  REQUIRE(back.kernel_size == cfg.kernel_size);
  REQUIRE(back.blocks_per_body == cfg.blocks_per_body);
  REQUIRE(back.body_channels == cfg.body_channels);
  REQUIRE(back.head_hidden == cfg.head_hidden);
  REQUIRE(back.dropout == cfg.dropout);
  REQUIRE(back.precision == cfg.precision);
}

TEST_CASE("model config accepts a plain integer channel width") {
  const ModelConfig cfg = ModelConfig::from_json(
      json{{"blocks_per_body", {1, 2}}, {"channels", 7}});
  REQUIRE(cfg.body_channels ==
          std::vector<std::vector<int>>{{7}, {7, 7}});
}

TEST_CASE("model config validation rejects bad values") {
  REQUIRE_THROWS_AS(ModelConfig::from_json(json{{"kernel_size", 4}}),
                    ConfigError);
  REQUIRE_THROWS_AS(ModelConfig::from_json(json{{"dropout", 1.0}}),
                    ConfigError);
  REQUIRE_THROWS_AS(
      ModelConfig::from_json(json{{"blocks_per_body", json::array()}}),
      ConfigError);
  REQUIRE_THROWS_AS(ModelConfig::from_json(json{{"precision", "float16"}}),
                    ConfigError);
  REQUIRE_THROWS_AS(ModelConfig::from_json(json{{"kind", "transformer"}}),
                    ConfigError);
  REQUIRE_THROWS_AS(
      ModelConfig::from_json(
          json{{"blocks_per_body", {2}}, {"channels", {{4, 4, 4}}}}),
      ConfigError);
}

TEST_CASE("deterministic init: same seed, same parameters") {
  const ModelConfig cfg = ModelConfig::with_width(3, 4);
  MultiScaleModel<double> a(cfg), b(cfg), c(cfg);
  Rng r1(99), r2(99), r3(100);
  a.init_parameters(r1);
  b.init_parameters(r2);
  c.init_parameters(r3);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  const auto pc = c.named_parameters();
  bool all_equal = true, any_diff_from_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].second.values() != pb[i].second.values()) all_equal = false;
    if (pa[i].second.values() != pc[i].second.values()) any_diff_from_c = true;
  }
  REQUIRE(all_equal);
  REQUIRE(any_diff_from_c);
}

TEST_CASE("finite differences confirm the assembled model end to end") {
  // a narrow but structurally complete build: every layer type participates
  ModelConfig cfg;
  cfg.blocks_per_body = {1, 2};
  cfg.body_channels = ModelConfig::uniform_channels({1, 2}, 3);
  cfg.head_hidden = 4;
  cfg.dropout = 0.0;
  MultiScaleModel<double> model(cfg);
  Rng rng(31);
  model.init_parameters(rng);

  Td x = Td::zeros({2, 1, 7});
  Rng fill(32);
  for (double& v : x.values()) v = fill.uniform(0.0, 1.0);
  Td w = Td::zeros({2, 1, 7});
  for (double& v : w.values()) v = fill.uniform(-1.0, 1.0);

  std::vector<Td> leaves;
  leaves.push_back(x);
  for (auto& t : model.parameters()) leaves.push_back(t);

  auto loss = [&] {
    return sum(mul(model.forward(x, ForwardCtx{Phase::eval, nullptr}), w));
  };
  auto rep = gradcheck::check(leaves, loss);
  INFO(rep);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("baseline network shape and count") {
  BaselineCnnConfig cfg;
  cfg.channels = {4, 4};
  cfg.head_hidden = 8;
  BaselineCnn<double> model(cfg);
  // conv0: 4*1*5+4 = 24; conv1: 4*4*5+4 = 84; head: 4*8+8 = 40; out: 8+1 = 9
  REQUIRE(model.parameter_count() == 157u);
  Rng rng(3);
  model.init_parameters(rng);
  const Td y = model.forward(Td::zeros({1, 1, 16}),
                             ForwardCtx{Phase::eval, nullptr});
  REQUIRE(y.shape() == Shape{1, 1, 16});

  const BaselineCnnConfig back = BaselineCnnConfig::from_json(cfg.to_json());
  REQUIRE(back.channels == cfg.channels);
  REQUIRE_THROWS_AS(BaselineCnnConfig::from_json(json{{"kernel_size", 2}}),
                    ConfigError);
}
