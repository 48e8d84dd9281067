#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "nilm/checkpoint.hpp"
#include "nilm/model.hpp"

using namespace nilm;
using Catch::Matchers::WithinAbs;

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nilm-ckpt-tests";
  fs::create_directories(dir);
  return dir / name;
}

template <typename S>
MultiScaleModel<S> small_model(std::uint64_t seed) {
  MultiScaleModel<S> model(ModelConfig::with_width(3, 4));
  Rng rng(seed);
  model.init_parameters(rng);
  return model;
}

}  // namespace

TEST_CASE("float32 checkpoint round trip restores every bit") {
  auto model = small_model<float>(41);
  const fs::path path = temp_file("roundtrip32.ckpt");
  save_checkpoint(path.string(), make_checkpoint<float>(model, json{{"seed", 7}}));

  auto other = small_model<float>(999);  // different start, then overwritten
  REQUIRE(parameters_digest<float>(other) != parameters_digest<float>(model));
  load_into_model<float>(load_checkpoint(path.string()), other);
  REQUIRE(parameters_digest<float>(other) == parameters_digest<float>(model));
}

TEST_CASE("float64 checkpoint round trip restores every bit") {
  auto model = small_model<double>(42);
  const fs::path path = temp_file("roundtrip64.ckpt");
  save_checkpoint(path.string(), make_checkpoint<double>(model));
  auto other = small_model<double>(1000);
  load_into_model<double>(load_checkpoint(path.string()), other);
  REQUIRE(parameters_digest<double>(other) == parameters_digest<double>(model));
}

TEST_CASE("checkpoint preserves the config document") {
  auto model = small_model<float>(43);
  const fs::path path = temp_file("config.ckpt");
  save_checkpoint(path.string(),
                  make_checkpoint<float>(model, json{{"seed", 123},
                                                     {"appliance", "kettle"}}));
  const Checkpoint ck = load_checkpoint(path.string());
  REQUIRE(ck.config.at("meta").at("seed") == 123);
  REQUIRE(ck.config.at("meta").at("appliance") == "kettle");
  REQUIRE(ck.config.at("model").at("kind") == "multiscale");
  const ModelConfig cfg = ModelConfig::from_json(ck.config.at("model"));
  REQUIRE(cfg.body_channels == ModelConfig::with_width(3, 4).body_channels);
  REQUIRE(ck.total_parameters() == model.parameter_count());
}

TEST_CASE("precision conversion when dtypes differ") {
  auto model64 = small_model<double>(44);
  const fs::path path = temp_file("convert.ckpt");
  save_checkpoint(path.string(), make_checkpoint<double>(model64));

  MultiScaleModel<float> model32(ModelConfig::with_width(3, 4));
  load_into_model<float>(load_checkpoint(path.string()), model32);

  const auto p64 = model64.named_parameters();
  const auto p32 = model32.named_parameters();
  REQUIRE(p64.size() == p32.size());
  for (std::size_t i = 0; i < p64.size(); ++i) {
    for (std::size_t j = 0; j < p64[i].second.size(); ++j) {
      REQUIRE_THAT(static_cast<double>(p32[i].second.values()[j]),
                   WithinAbs(p64[i].second.values()[j], 1e-6));
    }
  }
}

TEST_CASE("loading into a mismatched model is refused") {
  auto model = small_model<float>(45);
  const fs::path path = temp_file("mismatch.ckpt");
  save_checkpoint(path.string(), make_checkpoint<float>(model));

  MultiScaleModel<float> bigger(ModelConfig::with_width(5, 6));
  REQUIRE_THROWS_AS(
      load_into_model<float>(load_checkpoint(path.string()), bigger),
      Error);
}

TEST_CASE("corrupt checkpoint files are rejected with io errors") {
  const fs::path good = temp_file("good.ckpt");
  auto model = small_model<float>(46);
  save_checkpoint(good.string(), make_checkpoint<float>(model));

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_checkpoint(temp_file("nope.ckpt").string()),
                      IoError);
  }
  SECTION("bad magic") {
    const fs::path bad = temp_file("magic.ckpt");
    std::ofstream os(bad, std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxxxxxx";
    os.close();
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), IoError);
  }
  SECTION("truncation at several depths") {
    std::ifstream is(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    is.close();
    for (const std::size_t keep :
         {std::size_t{9}, std::size_t{20}, bytes.size() / 2,
          bytes.size() - 3}) {
      const fs::path cut = temp_file("cut.ckpt");
      std::ofstream os(cut, std::ios::binary | std::ios::trunc);
      os.write(bytes.data(), static_cast<std::streamsize>(keep));
      os.close();
      CAPTURE(keep);
      REQUIRE_THROWS_AS(load_checkpoint(cut.string()), IoError);
    }
  }
  SECTION("unsupported version") {
    std::ifstream is(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
    is.close();
    bytes[8] = 9;  // version field follows the 8-byte magic
    const fs::path bad = temp_file("version.ckpt");
    std::ofstream os(bad, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), IoError);
  }
}

TEST_CASE("saving the same model twice produces identical bytes") {
  auto model = small_model<float>(47);
  const fs::path a = temp_file("bytes-a.ckpt");
  const fs::path b = temp_file("bytes-b.ckpt");
  save_checkpoint(a.string(), make_checkpoint<float>(model, json{{"seed", 1}}));
  save_checkpoint(b.string(), make_checkpoint<float>(model, json{{"seed", 1}}));
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  REQUIRE(ba == bb);
  REQUIRE_FALSE(ba.empty());
}

TEST_CASE("json digest tracks document content") {
  const json a{{"x", 1}, {"y", "z"}};
  const json b{{"x", 1}, {"y", "z"}};
  const json c{{"x", 2}, {"y", "z"}};
  REQUIRE(json_digest(a) == json_digest(b));
  REQUIRE(json_digest(a) != json_digest(c));
}

TEST_CASE("parameters digest reacts to any single value change") {
  auto model = small_model<float>(48);
  const std::uint64_t before = parameters_digest<float>(model);
  model.parameters()[0].values()[0] += 1e-3f;
  REQUIRE(parameters_digest<float>(model) != before);
}

TEST_CASE("checkpoint entry preserves shape metadata") {
  const Tensor<float> t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const CheckpointEntry e = CheckpointEntry::from_tensor<float>("w", t);
  REQUIRE(e.shape == Shape{2, 3});
  REQUIRE(e.numel() == 6);
  REQUIRE(e.raw.size() == 6 * sizeof(float));

  Tensor<float> wrong = Tensor<float>::zeros({3, 2});
  REQUIRE_THROWS_AS(e.copy_into(wrong), ShapeError);
}
